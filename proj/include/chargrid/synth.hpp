#pragma once

#include <array>
#include <cstdio>
#include <string>
#include <tuple>
#include <vector>

#include "chargrid/eval.hpp"
#include "chargrid/inference.hpp"

namespace chargrid {

// ---------------------------------------------------------------------------
// Synthetic invoice-like pages with exact annotations and ground-truth field
// strings. Layouts randomize the vendor block side, the header field slots,
// the table column positions, and the item rows; all geometry is derived
// from one seeded RNG, so a fixed seed reproduces the dataset bit for bit.
// ---------------------------------------------------------------------------

struct SynthConfig {
  std::uint64_t seed = 1;
  int n_pages = 10;
  int page_w = 768;
  int page_h = 1008;  // matches the 336x256 target aspect
  int char_w_min = 10, char_w_max = 13;
  int char_h_min = 14, char_h_max = 18;
  int min_items = 0, max_items = 8;
  double multirow_desc_prob = 0.35;
  int noise_words_min = 2, noise_words_max = 5;

  void validate() const {
    check(n_pages >= 1, "synth: n_pages must be >= 1");
    check(page_w >= 600 && page_h >= 800, "synth: page too small for the layout template");
    check(char_w_min >= 6 && char_w_max >= char_w_min, "synth: bad char width range");
    check(char_h_min >= 8 && char_h_max >= char_h_min, "synth: bad char height range");
    check(min_items >= 0 && max_items >= min_items && max_items <= 8,
          "synth: item count range must satisfy 0 <= min <= max <= 8");
    check(multirow_desc_prob >= 0.0 && multirow_desc_prob <= 1.0, "synth: bad probability");
    check(noise_words_min >= 0 && noise_words_max >= noise_words_min, "synth: bad noise range");
  }
};

struct SynthPage {
  DocumentPage page;
  ExtractionResult truth;
};

namespace synthdetail {

inline const std::vector<std::string>& vendor_words() {
  static const std::vector<std::string> v = {
      "ACME",  "GLOBEX", "NORDIC", "ATLAS",  "VERTEX", "LUMEN",  "DELTA",
      "ORION", "PIONEER", "SUMMIT", "HARBOR", "CEDAR",  "FALCON", "AURORA"};
  return v;
}

inline const std::vector<std::string>& vendor_suffixes() {
  static const std::vector<std::string> v = {"GMBH", "LLC", "LTD", "INC", "OY", "AB", "CO"};
  return v;
}

inline const std::vector<std::string>& product_words() {
  static const std::vector<std::string> v = {
      "WIDGET", "BRACKET", "GASKET", "VALVE",  "SENSOR", "CABLE", "PANEL",
      "FILTER", "MOTOR",   "PUMP",   "BEARING", "SPRING", "PLATE", "BOLT",
      "BLUE",   "STEEL",   "LARGE",  "SMALL",  "ROUND",  "FLAT",  "HEAVY"};
  return v;
}

inline const std::vector<std::string>& street_words() {
  static const std::vector<std::string> v = {"OAK",  "ELM",   "MAPLE", "BIRCH", "CEDAR",
                                             "PINE", "RIVER", "LAKE",  "HILL",  "PARK"};
  return v;
}

inline const std::vector<std::string>& street_kinds() {
  static const std::vector<std::string> v = {"ROAD", "STREET", "AVENUE", "LANE", "WAY"};
  return v;
}

inline const std::vector<std::string>& cities() {
  static const std::vector<std::string> v = {"BERLIN", "OSLO",   "MADRID", "PARIS", "VIENNA",
                                             "DUBLIN", "LISBON", "PRAGUE", "TURKU", "GENT"};
  return v;
}

inline const std::vector<std::string>& noise_pool() {
  static const std::vector<std::string> v = {"THANK",   "YOU",   "PAYMENT", "TERMS", "NET",
                                             "DUE",     "PAGE",  "ORIGINAL", "COPY",  "REF"};
  return v;
}

template <typename C>
const auto& pick(const C& pool, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
  return pool[d(rng)];
}

inline int rand_int(Rng& rng, int lo, int hi) {
  std::uniform_int_distribution<int> d(lo, hi);
  return d(rng);
}

inline std::string digits(Rng& rng, int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s.push_back(static_cast<char>('0' + rand_int(rng, i == 0 ? 1 : 0, 9)));
  return s;
}

struct PageBuilder {
  DocumentPage page;
  int cw = 10, chh = 14;
  std::vector<RectD> occupied;

  int pitch() const { return chh + 5; }

  // Lays out one line of text; spaces advance the cursor without emitting a
  // character. Returns the tight bounding rect of the emitted characters.
  RectD put_line(int x, int y, const std::string& text) {
    int cx = x;
    int x0 = -1, x1 = -1;
    for (char ch : text) {
      if (ch == ' ') {
        cx += cw;
        continue;
      }
      page.chars.push_back(CharBox{static_cast<char32_t>(ch), cx, y, cw, chh});
      if (x0 < 0) x0 = cx;
      x1 = cx + cw;
      cx += cw;
    }
    check(x0 >= 0, "put_line: blank text");
    check(x1 <= page.page_w && y + chh <= page.page_h, "synth layout exceeds page bounds");
    const RectD r{static_cast<double>(x0), static_cast<double>(y),
                  static_cast<double>(x1 - x0), static_cast<double>(chh)};
    occupied.push_back(r);
    return r;
  }

  RectD put_lines(int x, int y, const std::vector<std::string>& lines) {
    RectD box{};
    for (std::size_t i = 0; i < lines.size(); ++i) {
      box = rect_union(box, put_line(x, y + static_cast<int>(i) * pitch(), lines[i]));
    }
    return box;
  }

  void annotate(FieldClass cls, const RectD& r, int instance_id = 0) {
    page.annotations.push_back(FieldAnnotation{
        cls, static_cast<int>(r.x), static_cast<int>(r.y),
        static_cast<int>(r.w), static_cast<int>(r.h), instance_id});
  }

  bool collides(const RectD& r, double margin) const {
    const RectD probe{r.x - margin, r.y - margin, r.w + 2 * margin, r.h + 2 * margin};
    for (const RectD& o : occupied) {
      if (probe.x < o.right() && o.x < probe.right() && probe.y < o.bottom() &&
          o.y < probe.bottom()) {
        return true;
      }
    }
    return false;
  }
};

}  // namespace synthdetail

inline std::vector<SynthPage> generate(const SynthConfig& cfg) {
  using namespace synthdetail;
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<SynthPage> out;
  out.reserve(static_cast<std::size_t>(cfg.n_pages));

  for (int pi = 0; pi < cfg.n_pages; ++pi) {
    PageBuilder b;
    b.page.page_w = cfg.page_w;
    b.page.page_h = cfg.page_h;
    b.cw = rand_int(rng, cfg.char_w_min, cfg.char_w_max);
    b.chh = rand_int(rng, cfg.char_h_min, cfg.char_h_max);
    ExtractionResult truth;

    const int left_x = rand_int(rng, 30, 70);
    const int right_x = rand_int(rng, 400, 440);

    // Vendor block: name plus a two-line address, on a random side.
    {
      const bool left = rand_int(rng, 0, 1) == 0;
      const int vx = left ? left_x : right_x;
      const int vy = rand_int(rng, 30, 60);
      std::string name = pick(vendor_words(), rng);
      if (rand_int(rng, 0, 1)) name += " " + pick(vendor_words(), rng);
      name += " " + pick(vendor_suffixes(), rng);
      const RectD name_box = b.put_line(vx, vy, name);
      b.annotate(FieldClass::vendor_name, name_box);
      truth.header["vendor_name"] = name;

      const std::string addr1 =
          digits(rng, 2) + " " + pick(street_words(), rng) + " " + pick(street_kinds(), rng);
      const std::string addr2 = pick(cities(), rng) + " " + digits(rng, 5);
      const RectD addr_box = b.put_lines(vx, vy + b.pitch() + 4, {addr1, addr2});
      b.annotate(FieldClass::vendor_address, addr_box);
      truth.header["vendor_address"] = addr1 + "\n" + addr2;
    }

    // Labeled header fields in shuffled slots: four rows by two columns.
    {
      std::array<int, 4> slot_y;
      for (int s = 0; s < 4; ++s) slot_y[static_cast<std::size_t>(s)] = 170 + s * 45 + rand_int(rng, -8, 8);
      std::array<std::pair<int, int>, 8> slots;  // (x, y)
      for (int s = 0; s < 4; ++s) {
        slots[static_cast<std::size_t>(s * 2)] = {left_x, slot_y[static_cast<std::size_t>(s)]};
        slots[static_cast<std::size_t>(s * 2 + 1)] = {right_x, slot_y[static_cast<std::size_t>(s)]};
      }
      for (std::size_t s = slots.size(); s > 1; --s) {
        std::swap(slots[s - 1], slots[static_cast<std::size_t>(
                                    rand_int(rng, 0, static_cast<int>(s) - 1))]);
      }

      const std::string inv_no = "INV-" + digits(rng, rand_int(rng, 4, 6));
      char datebuf[16];
      std::snprintf(datebuf, sizeof(datebuf), "%04d-%02d-%02d", rand_int(rng, 2019, 2025),
                    rand_int(rng, 1, 12), rand_int(rng, 1, 28));
      const std::string date(datebuf);
      const std::string amount = digits(rng, rand_int(rng, 3, 5)) + "." + digits(rng, 2);

      const std::array<std::tuple<const char*, FieldClass, std::string>, 3> fields = {
          std::make_tuple("INVOICE NO:", FieldClass::invoice_number, inv_no),
          std::make_tuple("DATE:", FieldClass::invoice_date, date),
          std::make_tuple("TOTAL:", FieldClass::invoice_amount, amount)};
      for (std::size_t f = 0; f < fields.size(); ++f) {
        const auto& [label, cls, value] = fields[f];
        const auto [sx, sy] = slots[f];
        b.put_line(sx, sy, label);  // background context keyword
        const int vx = sx + static_cast<int>(std::string(label).size() + 1) * b.cw;
        const RectD vbox = b.put_line(vx, sy, value);
        b.annotate(cls, vbox);
        truth.header[field_class_name(cls)] = value;
      }
    }

    // Line-item table.
    {
      const int desc_x = rand_int(rng, 40, 80);
      const int qty_x = rand_int(rng, 420, 470);
      const int amt_x = rand_int(rng, 580, 620);
      const int table_y = rand_int(rng, 380, 420);
      b.put_line(desc_x, table_y, "DESCRIPTION");
      b.put_line(qty_x, table_y, "QTY");
      b.put_line(amt_x, table_y, "AMOUNT");

      const int n_items = rand_int(rng, cfg.min_items, cfg.max_items);
      int row_y = table_y + b.pitch() + 12;
      std::bernoulli_distribution multirow(cfg.multirow_desc_prob);
      for (int item = 1; item <= n_items; ++item) {
        std::vector<std::string> desc_lines;
        std::string d1 = pick(product_words(), rng);
        if (rand_int(rng, 0, 1)) d1 += " " + pick(product_words(), rng);
        desc_lines.push_back(d1);
        if (multirow(rng)) {
          desc_lines.push_back(pick(product_words(), rng));
        }
        const std::string qty = digits(rng, rand_int(rng, 1, 2));
        const std::string amt = digits(rng, rand_int(rng, 2, 3)) + "." + digits(rng, 2);

        const int rows = static_cast<int>(desc_lines.size());
        if (row_y + rows * b.pitch() + 20 > cfg.page_h - 30) break;
        const RectD desc_box = b.put_lines(desc_x, row_y, desc_lines);
        const RectD qty_box = b.put_line(qty_x, row_y, qty);
        const RectD amt_box = b.put_line(amt_x, row_y, amt);
        b.annotate(FieldClass::lineitem_description, desc_box, item);
        b.annotate(FieldClass::lineitem_quantity, qty_box, item);
        b.annotate(FieldClass::lineitem_amount, amt_box, item);
        std::string desc = desc_lines[0];
        for (std::size_t l = 1; l < desc_lines.size(); ++l) desc += "\n" + desc_lines[l];
        truth.line_items.push_back(LineItem{desc, qty, amt});
        row_y += rows * b.pitch() + 18;
      }
    }

    // Background noise words, rejection-sampled clear of everything else.
    {
      const int n_noise = rand_int(rng, cfg.noise_words_min, cfg.noise_words_max);
      for (int k = 0; k < n_noise; ++k) {
        const std::string& word = pick(noise_pool(), rng);
        for (int attempt = 0; attempt < 40; ++attempt) {
          const int nx = rand_int(rng, 25, cfg.page_w - static_cast<int>(word.size()) * b.cw - 25);
          const int ny = rand_int(rng, 25, cfg.page_h - b.chh - 25);
          const RectD probe{static_cast<double>(nx), static_cast<double>(ny),
                            static_cast<double>(static_cast<int>(word.size()) * b.cw),
                            static_cast<double>(b.chh)};
          if (b.collides(probe, 12.0)) continue;
          b.put_line(nx, ny, word);
          break;
        }
      }
    }

    validate_page(b.page);
    out.push_back(SynthPage{std::move(b.page), std::move(truth)});
  }
  return out;
}

}  // namespace chargrid
