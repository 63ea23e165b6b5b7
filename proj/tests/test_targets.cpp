#include <gtest/gtest.h>

#include "chargrid/targets.hpp"
#include "support/test_util.hpp"

using namespace chargrid;

namespace {

RectD rnd_box(Rng& rng, double max_pos = 50.0, double max_size = 30.0) {
  std::uniform_real_distribution<double> pos(0.0, max_pos);
  std::uniform_real_distribution<double> size(0.1, max_size);
  return RectD{pos(rng), pos(rng), size(rng), size(rng)};
}

DocumentPage annotated_page() {
  DocumentPage p;
  p.page_w = 64;
  p.page_h = 64;
  // One character under the invoice_number annotation and one outside it.
  p.chars.push_back(CharBox{U'a', 8, 8, 8, 8});
  p.chars.push_back(CharBox{U'b', 40, 40, 8, 8});
  p.annotations.push_back(FieldAnnotation{FieldClass::invoice_number, 4, 4, 16, 16, 0});
  return p;
}

}  // namespace

TEST(Iou, WorkedExamples) {
  const RectD a{0, 0, 2, 2};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, RectD{10, 10, 2, 2}), 0.0);
  // inter = 1x2 = 2, union = 4+4-2 = 6
  EXPECT_NEAR(iou(a, RectD{1, 0, 2, 2}), 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(iou(RectD{0, 0, 0, 0}, RectD{0, 0, 0, 0}), 0.0);
}

TEST(GenerateAnchors, CountsAndCenters) {
  const AnchorSet a = generate_anchors(2, 2, {{2.0, 1.0}});
  EXPECT_EQ(a.total(), 4);
  const RectD r = a.rect(0, 0, 0);
  EXPECT_DOUBLE_EQ(r.cx(), 0.5);
  EXPECT_DOUBLE_EQ(r.cy(), 0.5);
  EXPECT_THROW(generate_anchors(2, 2, {}), std::runtime_error);

  const AnchorSet d = generate_anchors(336, 256, default_anchor_shapes(256));
  EXPECT_EQ(d.total(), 344064);  // 336*256*4
}

TEST(BoxDeltas, WorkedExamples) {
  const RectD anchor{0, 0, 4, 6};
  const auto zero = encode_box_deltas(anchor, anchor);
  for (double v : zero) EXPECT_NEAR(v, 0.0, 1e-15);
  // gt twice the anchor width, same center and height -> t_w = ln 2
  const RectD wide{-2, 0, 8, 6};
  const auto t = encode_box_deltas(anchor, wide);
  EXPECT_NEAR(t[3], std::log(2.0), 1e-12);
  EXPECT_NEAR(t[0], 0.0, 1e-15);
  EXPECT_NEAR(t[1], 0.0, 1e-15);
  EXPECT_NEAR(t[2], 0.0, 1e-15);
  EXPECT_NEAR(t[3], 0.6931, 1e-4);
}

TEST(BoxDeltas, RoundTripWithin1e9) {
  Rng rng(17);
  for (int trial = 0; trial < 2000; ++trial) {
    const RectD anchor = rnd_box(rng);
    const RectD gt = rnd_box(rng);
    const RectD back = decode_box_deltas(anchor, encode_box_deltas(anchor, gt));
    EXPECT_NEAR(back.x, gt.x, 1e-9);
    EXPECT_NEAR(back.y, gt.y, 1e-9);
    EXPECT_NEAR(back.w, gt.w, 1e-9);
    EXPECT_NEAR(back.h, gt.h, 1e-9);
  }
}

TEST(MatchAnchors, NoGtIsAllBackground) {
  const AnchorSet a = generate_anchors(4, 4, {{4.0, 2.0}});
  const AnchorMatch m = match_anchors(a, {});
  for (std::int64_t i = 0; i < m.state.numel(); ++i) EXPECT_EQ(m.state[i], kAnchorBackground);
}

TEST(MatchAnchors, ExactAnchorIsForeground) {
  const AnchorSet a = generate_anchors(8, 8, {{8.0, 2.0}});
  // gt equals the anchor at cell (3, 3): center (3.5, 3.5), 8x2
  const std::vector<RectD> gt = {a.rect(3, 3, 0)};
  const AnchorMatch m = match_anchors(a, gt);
  EXPECT_EQ(m.state.at(3, 3, 0), kAnchorForeground);
  EXPECT_EQ(m.best_gt.at(3, 3, 0), 0);
}

TEST(MatchAnchors, ThresholdRuleOracle) {
  // Per-anchor oracle: foreground iff max-IoU >= 0.5, background iff < 0.4,
  // ignore between, with the argmax fallback as the only extra foreground.
  Rng rng(41);
  const AnchorSet a = generate_anchors(16, 4, {{4.0, 4.0}, {4.0, 8.0}});
  int saw_ignore = 0;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<RectD> gts;
    std::uniform_real_distribution<double> ypos(-2.0, 14.0);
    std::uniform_real_distribution<double> hgt(1.0, 9.0);
    const int n = 1 + static_cast<int>(rng() % 3);
    for (int g = 0; g < n; ++g) gts.push_back(RectD{-0.5, ypos(rng), 4.0, hgt(rng)});
    const AnchorMatch m = match_anchors(a, gts, 0.5, 0.4);
    std::int64_t flat = 0;
    for (int i = 0; i < 16; ++i) {
      for (int j = 0; j < 4; ++j) {
        for (int s = 0; s < 2; ++s, ++flat) {
          double best = 0.0;
          for (const RectD& g : gts) best = std::max(best, iou(a.rect(i, j, s), g));
          if (best >= 0.5) {
            EXPECT_EQ(m.state[flat], kAnchorForeground);
          } else if (best < 0.4) {
            // the argmax fallback may promote a below-threshold anchor
            EXPECT_NE(m.state[flat], kAnchorIgnore);
          } else {
            saw_ignore += m.state[flat] == kAnchorIgnore;
            EXPECT_TRUE(m.state[flat] == kAnchorIgnore || m.state[flat] == kAnchorForeground);
          }
        }
      }
    }
  }
  EXPECT_GT(saw_ignore, 0) << "test never exercised the ignore band";
}

TEST(MatchAnchors, ArgmaxGuaranteesForegroundPerGt) {
  Rng rng(23);
  const AnchorSet a = generate_anchors(24, 8, {{8.0, 2.0}, {8.0, 6.0}});
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RectD> gts;
    const int n = 1 + static_cast<int>(rng() % 4);
    std::uniform_real_distribution<double> ypos(0.0, 20.0);
    std::uniform_real_distribution<double> hgt(0.5, 8.0);
    for (int g = 0; g < n; ++g) gts.push_back(RectD{0.0, ypos(rng), 8.0, hgt(rng)});
    const AnchorMatch m = match_anchors(a, gts);
    std::vector<bool> has_fg(gts.size(), false);
    for (std::int64_t i = 0; i < m.state.numel(); ++i) {
      if (m.state[i] == kAnchorForeground) {
        ASSERT_GE(m.best_gt[i], 0);
        has_fg[static_cast<std::size_t>(m.best_gt[i])] = true;
      }
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
      // every gt here overlaps some anchor
      EXPECT_TRUE(has_fg[g]) << "gt " << g << " lost at trial " << trial;
    }
  }
}

TEST(RasterizeSegmentation, NoAnnotationsAllBackground) {
  DocumentPage p = annotated_page();
  p.annotations.clear();
  const Tensor<int> labels = rasterize_segmentation(p, 32, 32);
  for (std::int64_t i = 0; i < labels.numel(); ++i) EXPECT_EQ(labels[i], 0);
}

TEST(RasterizeSegmentation, LabelsRequireCharacterUnderCell) {
  const DocumentPage p = annotated_page();
  const Tensor<int> labels = rasterize_segmentation(p, 64, 64);
  const Tensor<int> owner = build_owner_grid(p, 64, 64);
  int labeled = 0;
  for (int i = 0; i < 64; ++i) {
    for (int j = 0; j < 64; ++j) {
      if (labels.at(i, j) == static_cast<int>(FieldClass::invoice_number)) {
        labeled++;
        EXPECT_EQ(owner.at(i, j), 0) << "labeled cell must sit on the annotated char";
      }
      // empty cells inside the annotation stay background
      if (owner.at(i, j) < 0) EXPECT_EQ(labels.at(i, j), 0);
    }
  }
  EXPECT_GT(labeled, 0);
}

TEST(RasterizeSegmentation, NestedBoxesSmallestWins) {
  DocumentPage p;
  p.page_w = 64;
  p.page_h = 64;
  p.chars.push_back(CharBox{U'n', 16, 16, 8, 8});
  p.annotations.push_back(FieldAnnotation{FieldClass::vendor_address, 4, 4, 56, 56, 0});
  p.annotations.push_back(FieldAnnotation{FieldClass::vendor_name, 12, 12, 16, 16, 0});
  const Tensor<int> labels = rasterize_segmentation(p, 64, 64);
  const Tensor<int> owner = build_owner_grid(p, 64, 64);
  for (int i = 0; i < 64; ++i) {
    for (int j = 0; j < 64; ++j) {
      if (owner.at(i, j) >= 0) {
        EXPECT_EQ(labels.at(i, j), static_cast<int>(FieldClass::vendor_name));
      }
    }
  }
}

TEST(RasterizeSegmentation, AgreesWithPerCellOracle) {
  Rng rng(37);
  for (int trial = 0; trial < 25; ++trial) {
    DocumentPage p;
    p.page_w = 40 + static_cast<int>(rng() % 25);
    p.page_h = 40 + static_cast<int>(rng() % 25);
    for (int k = 0; k < 10; ++k) {
      const int w = 2 + static_cast<int>(rng() % 10);
      const int h = 2 + static_cast<int>(rng() % 10);
      p.chars.push_back(CharBox{static_cast<char32_t>(U'a' + k),
                                static_cast<int>(rng() % static_cast<unsigned>(p.page_w - w)),
                                static_cast<int>(rng() % static_cast<unsigned>(p.page_h - h)), w,
                                h});
    }
    p.annotations.push_back(FieldAnnotation{FieldClass::invoice_date, 2, 2, 20, 20, 0});
    p.annotations.push_back(FieldAnnotation{FieldClass::vendor_address, 10, 10, 25, 28, 0});
    p.annotations.push_back(FieldAnnotation{FieldClass::lineitem_amount, 5, 30, 30, 10, 1});
    const int gh = 16 + static_cast<int>(rng() % 48);
    const int gw = 16 + static_cast<int>(rng() % 48);
    const Tensor<int> labels = rasterize_segmentation(p, gh, gw);
    const Tensor<int> owner = build_owner_grid(p, gh, gw);
    for (int i = 0; i < gh; ++i) {
      for (int j = 0; j < gw; ++j) {
        // oracle: smallest annotation containing the sample point, if the
        // cell holds a character
        int expect = 0;
        if (owner.at(i, j) >= 0) {
          const double py = cell_sample_y(i, gh, p.page_h);
          const double px = cell_sample_x(j, gw, p.page_w);
          double best_area = 1e300;
          for (const auto& a : p.annotations) {
            if (a.rect().contains(px, py) && a.rect().area() < best_area) {
              best_area = a.rect().area();
              expect = static_cast<int>(a.field_class);
            }
          }
        }
        ASSERT_EQ(labels.at(i, j), expect) << "cell " << i << "," << j << " trial " << trial;
      }
    }
  }
}

TEST(LineitemRowBoxes, UnionFullWidthAndOrdering) {
  DocumentPage p;
  p.page_w = 100;
  p.page_h = 100;
  p.annotations.push_back(FieldAnnotation{FieldClass::lineitem_description, 10, 10, 30, 5, 1});
  p.annotations.push_back(FieldAnnotation{FieldClass::lineitem_amount, 70, 11, 20, 3, 1});
  p.annotations.push_back(FieldAnnotation{FieldClass::lineitem_description, 10, 50, 30, 5, 2});
  const auto boxes = lineitem_row_boxes(p, 100, 80);
  ASSERT_EQ(boxes.size(), 2u);
  // instance 1: rows 10..15 unioned with 11..14 -> 10..15, full width
  EXPECT_DOUBLE_EQ(boxes[0].x, 0.0);
  EXPECT_DOUBLE_EQ(boxes[0].w, 80.0);
  EXPECT_DOUBLE_EQ(boxes[0].y, 10.0);
  EXPECT_DOUBLE_EQ(boxes[0].h, 5.0);
  EXPECT_LT(boxes[0].y, boxes[1].y);
  // disjoint row spans stay disjoint
  EXPECT_LE(boxes[0].bottom(), boxes[1].y);

  DocumentPage empty;
  empty.page_w = empty.page_h = 10;
  EXPECT_TRUE(lineitem_row_boxes(empty, 10, 10).empty());
}

TEST(ClassWeights, EnetRuleValues) {
  EXPECT_NEAR(weight_from_frequency(0.5), 2.316, 1e-3);
  EXPECT_NEAR(weight_from_frequency(0.0), 25.50, 1e-2);
  EXPECT_NEAR(weight_from_frequency(1.0), 1.403, 1e-3);
}

TEST(ClassWeights, MonotonicallyDecreasingInFrequency) {
  double prev = weight_from_frequency(0.0);
  for (double p = 0.05; p <= 1.0; p += 0.05) {
    const double w = weight_from_frequency(p);
    EXPECT_LT(w, prev);
    prev = w;
  }
}

TEST(ClassWeights, PooledFromLabels) {
  Tensor<int> labels({2, 2});
  labels[0] = 0;
  labels[1] = 0;
  labels[2] = 1;
  labels[3] = 2;
  const auto w = compute_class_weights(std::span(&labels, 1), 3);
  EXPECT_NEAR(w[0], weight_from_frequency(0.5), 1e-12);
  EXPECT_NEAR(w[1], weight_from_frequency(0.25), 1e-12);
  EXPECT_NEAR(w[2], weight_from_frequency(0.25), 1e-12);
}

TEST(SamplingWeights, OversamplesBusyPages) {
  DocumentPage few;
  few.page_w = few.page_h = 100;
  DocumentPage many = few;
  for (int i = 1; i <= 5; ++i) {
    many.annotations.push_back(FieldAnnotation{FieldClass::lineitem_amount, 1, i * 10, 5, 5, i});
  }
  std::vector<DocumentPage> pages = {many, few};
  const auto w = compute_sampling_weights(pages, 3.0, 3);
  EXPECT_NEAR(w[0], 0.75, 1e-12);
  EXPECT_NEAR(w[1], 0.25, 1e-12);

  const auto uniform = compute_sampling_weights(pages, 1.0, 3);
  EXPECT_NEAR(uniform[0], 0.5, 1e-12);
  EXPECT_NEAR(uniform[1], 0.5, 1e-12);

  std::vector<DocumentPage> quiet = {few, few, few};
  for (const double v : compute_sampling_weights(quiet)) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}
