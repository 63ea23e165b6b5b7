#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "chargrid/inference.hpp"

namespace chargrid {

// ---------------------------------------------------------------------------
// Edit-based accuracy: per field, count the insertions, deletions, and
// modifications needed to turn the predicted instances into the ground-truth
// instances, pooled over the test set; measure = 1 - (ins+del+mod)/N. The
// measure can go negative. Comparison happens on the string level, so OCR
// errors shared by prediction and truth do not count against the system.
// ---------------------------------------------------------------------------

struct EditCounts {
  std::int64_t insertions = 0;
  std::int64_t deletions = 0;
  std::int64_t modifications = 0;

  std::int64_t total() const { return insertions + deletions + modifications; }
  EditCounts& operator+=(const EditCounts& o) {
    insertions += o.insertions;
    deletions += o.deletions;
    modifications += o.modifications;
    return *this;
  }
};

// Exact-equal strings match first (each at most once); the leftovers pair up
// as modifications, which minimizes the total edit count: edits =
// |truth| + |pred| - matched - equal_matched, maximized by matching exact
// pairs and then pairing as many leftovers as possible.
inline EditCounts match_instances(std::vector<std::string> predicted,
                                  std::vector<std::string> truth) {
  std::multiset<std::string> pred_pool(predicted.begin(), predicted.end());
  std::int64_t exact = 0;
  for (const std::string& t : truth) {
    auto it = pred_pool.find(t);
    if (it != pred_pool.end()) {
      pred_pool.erase(it);
      exact++;
    }
  }
  const std::int64_t rem_pred = static_cast<std::int64_t>(pred_pool.size());
  const std::int64_t rem_truth = static_cast<std::int64_t>(truth.size()) - exact;
  EditCounts e;
  e.modifications = std::min(rem_pred, rem_truth);
  e.insertions = rem_truth - e.modifications;  // truths nobody predicted
  e.deletions = rem_pred - e.modifications;    // spurious predictions
  return e;
}

struct FieldReport {
  std::int64_t n = 0;  // ground-truth instances
  EditCounts edits;
  std::optional<double> measure;  // undefined when n == 0
};

struct EvalReport {
  std::map<std::string, FieldReport> fields;
  FieldReport overall;
};

inline const std::vector<std::string>& eval_field_names() {
  static const std::vector<std::string> names = {
      "invoice_number", "invoice_date",        "invoice_amount",
      "vendor_name",    "vendor_address",      "lineitem_description",
      "lineitem_quantity", "lineitem_amount"};
  return names;
}

// Nonempty instance strings of one field in one document, normalized.
inline std::vector<std::string> field_instances(const ExtractionResult& r,
                                                const std::string& field) {
  std::vector<std::string> out;
  const FieldClass fc = field_class_from_name(field);
  if (is_header_class(fc)) {
    auto it = r.header.find(field);
    if (it != r.header.end()) {
      const std::string s = normalize_ws(it->second);
      if (!s.empty()) out.push_back(s);
    }
    return out;
  }
  for (const LineItem& item : r.line_items) {
    const std::string* raw = nullptr;
    if (fc == FieldClass::lineitem_description) raw = &item.description;
    else if (fc == FieldClass::lineitem_quantity) raw = &item.quantity;
    else if (fc == FieldClass::lineitem_amount) raw = &item.amount;
    else fail("field_instances: not an instance field: " + field);
    const std::string s = normalize_ws(*raw);
    if (!s.empty()) out.push_back(s);
  }
  return out;
}

// Instances match per document; edit counts and N pool across the test set.
inline EvalReport evaluate(
    std::span<const std::pair<ExtractionResult, ExtractionResult>> pred_truth_pairs,
    const std::vector<std::string>& fields = eval_field_names()) {
  EvalReport report;
  for (const std::string& field : fields) {
    FieldReport fr;
    for (const auto& [pred, truth] : pred_truth_pairs) {
      const auto ti = field_instances(truth, field);
      fr.n += static_cast<std::int64_t>(ti.size());
      fr.edits += match_instances(field_instances(pred, field), ti);
    }
    if (fr.n > 0) {
      fr.measure = 1.0 - static_cast<double>(fr.edits.total()) / static_cast<double>(fr.n);
    }
    report.overall.n += fr.n;
    report.overall.edits += fr.edits;
    report.fields[field] = fr;
  }
  if (report.overall.n > 0) {
    report.overall.measure = 1.0 - static_cast<double>(report.overall.edits.total()) /
                                       static_cast<double>(report.overall.n);
  }
  return report;
}

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json j;
  auto field_json = [](const FieldReport& fr) {
    nlohmann::json jf{{"n", fr.n},
                      {"insertions", fr.edits.insertions},
                      {"deletions", fr.edits.deletions},
                      {"modifications", fr.edits.modifications}};
    if (fr.measure) jf["measure"] = *fr.measure;
    else jf["measure"] = nullptr;
    return jf;
  };
  j["fields"] = nlohmann::json::object();
  for (const auto& [name, fr] : r.fields) j["fields"][name] = field_json(fr);
  j["overall"] = field_json(r.overall);
  return j;
}

// Text table, fields as columns, measures in percent.
inline std::string eval_report_table(const EvalReport& r) {
  std::ostringstream os;
  os << "Field                 |     N |  ins |  del |  mod | measure\n";
  os << "----------------------+-------+------+------+------+--------\n";
  auto row = [&os](const std::string& name, const FieldReport& fr) {
    os << name;
    for (std::size_t i = name.size(); i < 22; ++i) os << ' ';
    char buf[96];
    if (fr.measure) {
      std::snprintf(buf, sizeof(buf), "| %5lld | %4lld | %4lld | %4lld | %6.2f%%\n",
                    static_cast<long long>(fr.n), static_cast<long long>(fr.edits.insertions),
                    static_cast<long long>(fr.edits.deletions),
                    static_cast<long long>(fr.edits.modifications), 100.0 * *fr.measure);
    } else {
      std::snprintf(buf, sizeof(buf), "| %5lld | %4lld | %4lld | %4lld |    n/a\n",
                    static_cast<long long>(fr.n), static_cast<long long>(fr.edits.insertions),
                    static_cast<long long>(fr.edits.deletions),
                    static_cast<long long>(fr.edits.modifications));
    }
    os << buf;
  };
  for (const auto& [name, fr] : r.fields) row(name, fr);
  row("overall", r.overall);
  return os.str();
}

}  // namespace chargrid
