// Unified command-line interface for the chargrid pipeline:
//   ingest      OCR TSV (+ annotations) -> canonical page JSON
//   build-vocab page JSONs -> vocabulary JSON
//   build-grid  page JSON -> network input tensor container (+ targets)
//   synth       synthetic invoice dataset with ground truth
//   train       train the network on a page directory
//   predict     run inference on one page, emit extracted fields
//   evaluate    edit-based accuracy of predictions vs ground truth

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "chargrid/eval.hpp"
#include "chargrid/overlay.hpp"
#include "chargrid/synth.hpp"
#include "chargrid/training.hpp"

namespace fs = std::filesystem;
using namespace chargrid;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot open for write: " + path);
  f << content;
  check(f.good(), "write failed: " + path);
}

std::vector<std::string> list_page_files(const std::string& data_dir) {
  fs::path dir(data_dir);
  if (fs::is_directory(dir / "pages")) dir /= "pages";
  check(fs::is_directory(dir), "not a directory: " + data_dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") {
      files.push_back(e.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  check(!files.empty(), "no page JSON files under " + data_dir);
  return files;
}

std::vector<DocumentPage> load_pages(const std::string& data_dir) {
  std::vector<DocumentPage> pages;
  for (const std::string& f : list_page_files(data_dir)) {
    pages.push_back(page_from_json_string(read_file(f)));
  }
  return pages;
}

struct TrainRunConfig {
  NetworkConfig network;
  LossConfig loss;
  OptimizerConfig optimizer;
  int pad = 16;
  double sampling_ratio = 3.0;
  int sampling_threshold = 3;
  std::vector<double> anchor_heights = {4, 8, 16, 32};
  int checkpoint_every = 500;
  int stage1_scale = 2;
};

TrainRunConfig train_config_from_json(const nlohmann::json& j) {
  TrainRunConfig c;
  if (j.contains("network")) c.network = network_config_from_json(j.at("network"));
  if (j.contains("loss")) {
    const auto& jl = j.at("loss");
    c.loss.gamma = jl.value("gamma", 2.0);
    c.loss.huber_delta = jl.value("huber_delta", 1.0);
    c.loss.use_focal = jl.value("use_focal", true);
    c.loss.use_class_weights = jl.value("use_class_weights", true);
  }
  if (j.contains("optimizer")) {
    const auto& jo = j.at("optimizer");
    c.optimizer.lr = jo.value("lr", 0.05);
    c.optimizer.momentum = jo.value("momentum", 0.9);
    c.optimizer.weight_decay = jo.value("weight_decay", 1e-4);
    c.optimizer.batch_size = jo.value("batch_size", 2);
    c.optimizer.max_iterations = jo.value("max_iterations", 1000);
    c.optimizer.warmup_iters = jo.value("warmup_iters", 0);
  }
  if (j.contains("augment")) c.pad = j.at("augment").value("pad", 16);
  if (j.contains("sampling")) {
    c.sampling_ratio = j.at("sampling").value("ratio", 3.0);
    c.sampling_threshold = j.at("sampling").value("threshold", 3);
  }
  if (j.contains("anchors")) {
    c.anchor_heights = j.at("anchors").value("heights", std::vector<double>{4, 8, 16, 32});
  }
  c.checkpoint_every = j.value("checkpoint_every", 500);
  c.stage1_scale = j.value("stage1_scale", 2);
  check(c.pad >= 0 && c.checkpoint_every >= 0 && c.stage1_scale >= 1, "invalid train config");
  return c;
}

AnchorSet anchors_from_heights(int grid_h, int grid_w, const std::vector<double>& heights) {
  std::vector<std::array<double, 2>> shapes;
  for (double h : heights) shapes.push_back({static_cast<double>(grid_w), h});
  return generate_anchors(grid_h, grid_w, shapes);
}

void write_manifest(const std::string& dir, const nlohmann::json& config, std::uint64_t seed,
                    int threads) {
  nlohmann::json m{{"tool", "chargrid"},
                   {"tool_version", "0.1.0"},
                   {"container_version", TensorFile::kVersion},
                   {"seed", seed},
                   {"threads", threads},
                   {"config", config}};
  write_file(dir + "/run_manifest.json", m.dump(2) + "\n");
}

// --- subcommand bodies ------------------------------------------------------

int run_ingest(const std::string& tsv, const std::string& annotations, const std::string& out) {
  DocumentPage page = parse_ocr_tsv(read_file(tsv));
  if (!annotations.empty()) {
    std::vector<std::string> warnings;
    page = load_annotations(read_file(annotations), std::move(page), &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  }
  write_file(out, page_to_json_string(page) + "\n");
  std::cout << "wrote " << out << " (" << page.chars.size() << " chars, "
            << page.annotations.size() << " annotations)\n";
  return 0;
}

int run_build_vocab(const std::string& data, int n_classes, const std::string& out) {
  const auto pages = load_pages(data);
  const Vocabulary v = build_vocabulary(pages, n_classes);
  save_vocabulary(v, out);
  std::cout << "wrote " << out << " (" << v.char_to_index.size() << " characters, n_classes="
            << v.n_classes << ")\n";
  return 0;
}

int run_build_grid(const std::string& page_file, const std::string& vocab_file, int h, int w,
                   const std::string& out, bool with_targets,
                   const std::vector<double>& anchor_heights, int stage1_scale) {
  const DocumentPage page = page_from_json_string(read_file(page_file));
  const Vocabulary vocab = load_vocabulary(vocab_file);
  TensorFile tf;
  tf.add("input", prepare_input<float>(page, vocab, h, w, stage1_scale));
  if (with_targets) {
    const AnchorSet anchors = anchors_from_heights(h, w, anchor_heights);
    const TargetBundle t = make_targets(page, h, w, anchors);
    tf.add("seg_labels", t.seg_labels.cast<std::int32_t>());
    tf.add("anchor_state", t.anchor_state);
    tf.add("box_deltas", t.box_deltas);
    Tensor<double> gt({static_cast<int>(t.gt_boxes.size()), 4});
    for (std::size_t i = 0; i < t.gt_boxes.size(); ++i) {
      gt[static_cast<std::int64_t>(i) * 4 + 0] = t.gt_boxes[i].x;
      gt[static_cast<std::int64_t>(i) * 4 + 1] = t.gt_boxes[i].y;
      gt[static_cast<std::int64_t>(i) * 4 + 2] = t.gt_boxes[i].w;
      gt[static_cast<std::int64_t>(i) * 4 + 3] = t.gt_boxes[i].h;
    }
    tf.add("gt_boxes", gt);
  }
  tf.save(out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int run_synth(int n, std::uint64_t seed, const std::string& out, int min_items, int max_items) {
  SynthConfig cfg;
  cfg.n_pages = n;
  cfg.seed = seed;
  cfg.min_items = min_items;
  cfg.max_items = max_items;
  const auto pages = generate(cfg);
  fs::create_directories(fs::path(out) / "pages");
  fs::create_directories(fs::path(out) / "truth");
  for (std::size_t i = 0; i < pages.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "page_%04zu.json", i);
    write_file((fs::path(out) / "pages" / name).string(), page_to_json_string(pages[i].page) + "\n");
    write_file((fs::path(out) / "truth" / name).string(),
               extraction_to_json(pages[i].truth).dump(2) + "\n");
  }
  nlohmann::json jc{{"n_pages", cfg.n_pages}, {"page_w", cfg.page_w}, {"page_h", cfg.page_h},
                    {"min_items", cfg.min_items}, {"max_items", cfg.max_items}};
  write_manifest(out, jc, seed, thread_count());
  std::cout << "wrote " << pages.size() << " pages under " << out << "\n";
  return 0;
}

int run_train(const std::string& data, const std::string& vocab_file, const std::string& config,
              const std::string& out, std::uint64_t seed) {
  nlohmann::json jc = nlohmann::json::object();
  if (!config.empty()) jc = nlohmann::json::parse(read_file(config));
  TrainRunConfig cfg = train_config_from_json(jc);
  fs::create_directories(out);

  const auto pages = load_pages(data);
  Vocabulary vocab;
  if (!vocab_file.empty() && fs::exists(vocab_file)) {
    vocab = load_vocabulary(vocab_file);
    check(vocab.n_classes == cfg.network.n_vocab,
          "vocabulary n_classes does not match network n_vocab");
  } else {
    vocab = build_vocabulary(pages, cfg.network.n_vocab);
  }
  save_vocabulary(vocab, out + "/vocab.json");

  TrainDataset ds = prepare_dataset(pages, vocab, cfg.network.input_h, cfg.network.input_w,
                                    cfg.sampling_ratio, cfg.sampling_threshold, cfg.stage1_scale);
  const AnchorSet anchors =
      anchors_from_heights(cfg.network.input_h, cfg.network.input_w, cfg.anchor_heights);
  fill_loss_weights(ds, anchors, cfg.loss);

  Network<float> net(cfg.network);
  net.initialize(seed);

  TrainOptions opts;
  opts.pad = cfg.pad;
  opts.checkpoint_every = cfg.checkpoint_every;
  opts.checkpoint_dir = out;
  std::cout << "training: " << ds.items.size() << " pages, " << net.parameter_count()
            << " parameters, " << cfg.optimizer.max_iterations << " iterations\n";
  TrainState state = train(ds, net, cfg.loss, cfg.optimizer, anchors, seed, opts);
  save_checkpoint(net, state, cfg.loss, anchors, out + "/final");
  write_train_log_csv(state.log, out + "/train_log.csv");
  write_manifest(out, jc, seed, thread_count());
  const TrainLogRow& last = state.log.empty() ? TrainLogRow{} : state.log.back();
  std::cout << "done at iteration " << state.iteration << ", final L_total=" << last.l_total
            << "; checkpoints in " << out << "\n";
  return 0;
}

int run_predict(const std::string& ckpt, const std::string& page_file,
                const std::string& vocab_file, const std::string& out,
                const std::string& overlay, double score_thresh, double nms_iou) {
  const CheckpointMeta meta = load_checkpoint_meta(ckpt);
  Network<float> net(meta.network);
  net.load_tensors(TensorFile::load(ckpt + ".tensors"));
  const Vocabulary vocab = load_vocabulary(vocab_file);
  check(vocab.n_classes == meta.network.n_vocab, "vocabulary does not match checkpoint");
  const DocumentPage page = page_from_json_string(read_file(page_file));

  const int h = meta.network.input_h, w = meta.network.input_w;
  Tensor<float> input({1, h, w, meta.network.n_vocab});
  {
    Tensor<float> one = prepare_input<float>(page, vocab, h, w);
    std::copy(one.data.begin(), one.data.end(), input.data.begin());
  }
  auto heads = net.forward_eval(input);

  Tensor<float> seg_hwc({h, w, meta.network.n_seg_classes});
  std::copy(heads.seg_logits.value().data.begin(), heads.seg_logits.value().data.end(),
            seg_hwc.data.begin());
  const Tensor<int> seg_argmax = argmax_channels(softmax_values(seg_hwc));

  Tensor<float> mask_flat({h, w, 2 * meta.network.n_anchors});
  std::copy(heads.boxmask_logits.value().data.begin(), heads.boxmask_logits.value().data.end(),
            mask_flat.data.begin());
  Tensor<float> delta_flat({h, w, 4 * meta.network.n_anchors});
  std::copy(heads.box_deltas.value().data.begin(), heads.box_deltas.value().data.end(),
            delta_flat.data.begin());
  const AnchorSet anchors = anchors_from_heights(h, w, meta.anchor_heights);
  const std::vector<DetectedBox> boxes =
      nms(decode_boxes(mask_flat, delta_flat, anchors, score_thresh), nms_iou);

  const ExtractionResult result = extract(page, seg_argmax, boxes, h, w, meta.class_weights);
  write_file(out, extraction_to_json(result).dump(2) + "\n");
  if (!overlay.empty()) {
    const Chargrid tokens = build_chargrid(page, vocab, h, w);
    render_overlay(overlay, tokens, seg_argmax, boxes);
  }
  std::cout << "wrote " << out << " (" << result.header.size() << " header fields, "
            << result.line_items.size() << " line items, " << boxes.size() << " boxes)\n";
  return 0;
}

int run_evaluate(const std::string& pred_dir, const std::string& truth_dir,
                 const std::string& out) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(truth_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") {
      names.push_back(e.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  check(!names.empty(), "no truth files under " + truth_dir);
  std::vector<std::pair<ExtractionResult, ExtractionResult>> pairs;
  for (const std::string& name : names) {
    const fs::path pred_path = fs::path(pred_dir) / name;
    check(fs::exists(pred_path), "missing prediction for " + name);
    pairs.emplace_back(
        extraction_from_json(nlohmann::json::parse(read_file(pred_path.string()))),
        extraction_from_json(nlohmann::json::parse(read_file((fs::path(truth_dir) / name).string()))));
  }
  for (const auto& e : fs::directory_iterator(pred_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") {
      check(std::binary_search(names.begin(), names.end(), e.path().filename().string()),
            "prediction without matching truth: " + e.path().filename().string());
    }
  }
  const EvalReport report = evaluate(pairs);
  if (!out.empty()) write_file(out, eval_report_to_json(report).dump(2) + "\n");
  std::cout << eval_report_table(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chargrid: 2D character-grid document understanding pipeline"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  int threads = 0;
  std::string global_config;
  app.add_option("--seed", seed, "global RNG seed");
  app.add_option("--threads", threads, "thread budget (1 = bit-reproducible)");
  app.add_option("--config", global_config, "configuration JSON file");

  auto* c_ingest = app.add_subcommand("ingest", "parse OCR TSV into canonical page JSON");
  std::string tsv, annotations, out;
  c_ingest->add_option("--tsv", tsv, "Tesseract TSV file")->required();
  c_ingest->add_option("--annotations", annotations, "annotation JSON file");
  c_ingest->add_option("--out", out, "output page JSON")->required();

  auto* c_vocab = app.add_subcommand("build-vocab", "build the character vocabulary");
  std::string data, vocab_out;
  int n_classes = 54;
  c_vocab->add_option("--data", data, "directory of page JSONs")->required();
  c_vocab->add_option("--n-classes", n_classes, "vocabulary size incl. background/unknown");
  c_vocab->add_option("--out", vocab_out, "output vocabulary JSON")->required();

  auto* c_grid = app.add_subcommand("build-grid", "build the network input tensor for a page");
  std::string page_file, vocab_file, grid_out;
  int gh = 336, gw = 256, stage1_scale = 2;
  bool with_targets = false;
  std::vector<double> anchor_heights = {4, 8, 16, 32};
  c_grid->add_option("--page", page_file, "page JSON")->required();
  c_grid->add_option("--vocab", vocab_file, "vocabulary JSON")->required();
  c_grid->add_option("--h", gh, "target grid height");
  c_grid->add_option("--w", gw, "target grid width");
  c_grid->add_option("--stage1-scale", stage1_scale, "stage-1 grid scale factor");
  c_grid->add_flag("--with-targets", with_targets, "also rasterize training targets");
  c_grid->add_option("--anchor-heights", anchor_heights, "anchor heights in cells");
  c_grid->add_option("--out", grid_out, "output tensor container")->required();

  auto* c_synth = app.add_subcommand("synth", "generate a synthetic invoice dataset");
  int n_pages = 10, min_items = 0, max_items = 8;
  std::string synth_out;
  c_synth->add_option("--n", n_pages, "number of pages");
  c_synth->add_option("--min-items", min_items, "minimum line items per page");
  c_synth->add_option("--max-items", max_items, "maximum line items per page");
  c_synth->add_option("--out", synth_out, "output directory")->required();

  auto* c_train = app.add_subcommand("train", "train the network");
  std::string train_data, train_vocab, train_out;
  c_train->add_option("--data", train_data, "directory of page JSONs")->required();
  c_train->add_option("--vocab", train_vocab, "vocabulary JSON (built from data if absent)");
  c_train->add_option("--out", train_out, "checkpoint directory")->required();

  auto* c_predict = app.add_subcommand("predict", "extract fields from one page");
  std::string ckpt, pred_page, pred_vocab, pred_out, overlay_png;
  double score_thresh = 0.5, nms_iou = 0.5;
  c_predict->add_option("--ckpt", ckpt, "checkpoint prefix (without .tensors/.json)")->required();
  c_predict->add_option("--page", pred_page, "page JSON")->required();
  c_predict->add_option("--vocab", pred_vocab, "vocabulary JSON")->required();
  c_predict->add_option("--out", pred_out, "output result JSON")->required();
  c_predict->add_option("--overlay", overlay_png, "render a PNG overlay to this path");
  c_predict->add_option("--score-thresh", score_thresh, "box score threshold");
  c_predict->add_option("--nms-iou", nms_iou, "NMS IoU threshold");

  auto* c_eval = app.add_subcommand("evaluate", "edit-based accuracy of predictions vs truth");
  std::string pred_dir, truth_dir, report_out;
  c_eval->add_option("--pred", pred_dir, "directory of prediction JSONs")->required();
  c_eval->add_option("--truth", truth_dir, "directory of truth JSONs")->required();
  c_eval->add_option("--out", report_out, "output report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\nRun with --help for usage.\n";
    return 2;
  }

  if (threads > 0) set_thread_count(threads);

  try {
    if (c_ingest->parsed()) return run_ingest(tsv, annotations, out);
    if (c_vocab->parsed()) return run_build_vocab(data, n_classes, vocab_out);
    if (c_grid->parsed()) {
      return run_build_grid(page_file, vocab_file, gh, gw, grid_out, with_targets,
                            anchor_heights, stage1_scale);
    }
    if (c_synth->parsed()) return run_synth(n_pages, seed, synth_out, min_items, max_items);
    if (c_train->parsed()) return run_train(train_data, train_vocab, global_config, train_out, seed);
    if (c_predict->parsed()) {
      return run_predict(ckpt, pred_page, pred_vocab, pred_out, overlay_png, score_thresh, nms_iou);
    }
    if (c_eval->parsed()) return run_evaluate(pred_dir, truth_dir, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
