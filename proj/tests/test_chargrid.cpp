#include <gtest/gtest.h>

#include "chargrid/grid.hpp"
#include "support/test_util.hpp"

using namespace chargrid;

namespace {

DocumentPage page_with(int w, int h, std::vector<CharBox> chars) {
  DocumentPage p;
  p.page_w = w;
  p.page_h = h;
  p.chars = std::move(chars);
  return p;
}

// Brute-force reference: per cell, scan every box for sample-point overlap
// and resolve conflicts by closest box center (ties: lower character index).
Chargrid brute_force_chargrid(const DocumentPage& page, const Vocabulary& vocab, int gh, int gw) {
  Chargrid g(gh, gw);
  for (int i = 0; i < gh; ++i) {
    for (int j = 0; j < gw; ++j) {
      const double py = (i + 0.5) * static_cast<double>(page.page_h) / gh;
      const double px = (j + 0.5) * static_cast<double>(page.page_w) / gw;
      int best = -1;
      double best_d2 = 0;
      for (std::size_t k = 0; k < page.chars.size(); ++k) {
        const RectD r = page.chars[k].rect();
        if (!(px >= r.x && px < r.right() && py >= r.y && py < r.bottom())) continue;
        const double dx = px - r.cx(), dy = py - r.cy();
        const double d2 = dx * dx + dy * dy;
        if (best < 0 || d2 < best_d2) {
          best = static_cast<int>(k);
          best_d2 = d2;
        }
      }
      g.cells.at(i, j) = best < 0 ? 0 : vocab.encode(page.chars[static_cast<std::size_t>(best)].ch);
    }
  }
  return g;
}

Vocabulary ascii_vocab(int n_classes = 40) {
  Vocabulary v;
  v.n_classes = n_classes;
  int idx = 2;
  for (char32_t c = U'a'; c <= U'z' && idx < n_classes; ++c) v.char_to_index[c] = idx++;
  for (char32_t c = U'0'; c <= U'9' && idx < n_classes; ++c) v.char_to_index[c] = idx++;
  return v;
}

DocumentPage random_page(Rng& rng, int max_dim = 200, int max_boxes = 20) {
  DocumentPage p;
  p.page_w = 20 + static_cast<int>(rng() % static_cast<unsigned>(max_dim));
  p.page_h = 20 + static_cast<int>(rng() % static_cast<unsigned>(max_dim));
  const int n = static_cast<int>(rng() % static_cast<unsigned>(max_boxes + 1));
  for (int k = 0; k < n; ++k) {
    const int w = 1 + static_cast<int>(rng() % 30);
    const int h = 1 + static_cast<int>(rng() % 30);
    if (w >= p.page_w || h >= p.page_h) continue;
    const int x = static_cast<int>(rng() % static_cast<unsigned>(p.page_w - w));
    const int y = static_cast<int>(rng() % static_cast<unsigned>(p.page_h - h));
    p.chars.push_back(CharBox{static_cast<char32_t>(U'a' + rng() % 26), x, y, w, h});
  }
  return p;
}

}  // namespace

TEST(BuildVocabulary, FrequencyRankedWithCodepointTiebreak) {
  // corpus "aab": a twice, b once -> a:2, b:3
  DocumentPage p = page_with(50, 10, {{U'a', 0, 0, 5, 5}, {U'a', 10, 0, 5, 5}, {U'b', 20, 0, 5, 5}});
  const Vocabulary v = build_vocabulary(std::span(&p, 1), 4);
  EXPECT_EQ(v.encode(U'a'), 2);
  EXPECT_EQ(v.encode(U'b'), 3);
  EXPECT_EQ(v.encode(U'z'), Vocabulary::kUnknown);

  // corpus "ab", one slot: counts tie, codepoint ascending picks 'a'
  DocumentPage q = page_with(50, 10, {{U'a', 0, 0, 5, 5}, {U'b', 10, 0, 5, 5}});
  const Vocabulary v2 = build_vocabulary(std::span(&q, 1), 3);
  EXPECT_EQ(v2.encode(U'a'), 2);
  EXPECT_EQ(v2.encode(U'b'), Vocabulary::kUnknown);
}

TEST(BuildVocabulary, CountOracleOnRandomCorpora) {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    DocumentPage p;
    p.page_w = 1000;
    p.page_h = 100;
    std::map<char32_t, int> expect_counts;
    const int n = 1 + static_cast<int>(rng() % 60);
    for (int k = 0; k < n; ++k) {
      const char32_t c = static_cast<char32_t>(U'a' + rng() % 8);
      expect_counts[fold_char(c)]++;
      p.chars.push_back(CharBox{c, k * 10, 0, 5, 5});
    }
    const int n_classes = 3 + static_cast<int>(rng() % 8);
    const Vocabulary v = build_vocabulary(std::span(&p, 1), n_classes);
    // ranking oracle: sort by (count desc, codepoint asc)
    std::vector<std::pair<char32_t, int>> ranked(expect_counts.begin(), expect_counts.end());
    std::sort(ranked.begin(), ranked.end(), [](auto a, auto b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      const int expect = i < static_cast<std::size_t>(n_classes - 2) ? static_cast<int>(i) + 2
                                                                     : Vocabulary::kUnknown;
      EXPECT_EQ(v.encode(ranked[i].first), expect);
    }
  }
}

TEST(BuildVocabulary, Errors) {
  DocumentPage p = page_with(10, 10, {{U'a', 0, 0, 2, 2}});
  EXPECT_THROW(build_vocabulary(std::span(&p, 1), 2), std::runtime_error);
  DocumentPage empty = page_with(10, 10, {});
  EXPECT_THROW(build_vocabulary(std::span(&empty, 1), 5), std::runtime_error);
}

TEST(BuildVocabulary, LowercasesBeforeCounting) {
  DocumentPage p = page_with(50, 10, {{U'A', 0, 0, 5, 5}, {U'a', 10, 0, 5, 5}, {U'B', 20, 0, 5, 5}});
  const Vocabulary v = build_vocabulary(std::span(&p, 1), 4);
  EXPECT_EQ(v.encode(U'A'), 2);
  EXPECT_EQ(v.encode(U'a'), 2);
  EXPECT_EQ(v.encode(U'b'), 3);
}

TEST(BuildChargrid, SingleBoxCells) {
  const Vocabulary v = ascii_vocab();
  const DocumentPage p = page_with(4, 4, {{U'a', 0, 0, 2, 2}});
  const Chargrid g = build_chargrid(p, v, 4, 4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const int expect = (i < 2 && j < 2) ? v.encode(U'a') : 0;
      EXPECT_EQ(g.cells.at(i, j), expect) << i << "," << j;
    }
  }
}

TEST(BuildChargrid, EmptyPageIsAllZero) {
  const Vocabulary v = ascii_vocab();
  const Chargrid g = build_chargrid(page_with(10, 10, {}), v, 8, 8);
  for (std::int64_t i = 0; i < g.cells.numel(); ++i) EXPECT_EQ(g.cells[i], 0);
}

TEST(BuildChargrid, OverlapResolvedByClosestCenter) {
  const Vocabulary v = ascii_vocab();
  // 'a' center (2,2), 'b' center (5,2). On a 2x4 grid over the 8x8 page,
  // cell (0,1) samples page point (3,2), inside both boxes; distance 1 to
  // 'a' beats distance 2 to 'b'.
  DocumentPage p = page_with(8, 8, {{U'a', 0, 0, 4, 4}, {U'b', 2, 0, 6, 4}});
  const Chargrid g = build_chargrid(p, v, 2, 4);
  EXPECT_EQ(g.cells.at(0, 1), v.encode(U'a'));
  // cell (0,3) samples (7,2), inside only 'b'
  EXPECT_EQ(g.cells.at(0, 3), v.encode(U'b'));
  // exact distance tie keeps the lower character index: sample (5,2) in cell
  // (0,2) is 3 away from the 'a' center and 0 from 'b' -- not a tie; build a
  // symmetric pair instead: centers (2,2) and (4,2), sample (3,2).
  DocumentPage q = page_with(8, 8, {{U'a', 0, 0, 4, 4}, {U'b', 2, 0, 4, 4}});
  const Chargrid g2 = build_chargrid(q, v, 2, 4);
  EXPECT_EQ(g2.cells.at(0, 1), v.encode(U'a'));
}

TEST(BuildChargrid, MatchesBruteForceOracle) {
  const Vocabulary v = ascii_vocab();
  Rng rng(99);
  for (int trial = 0; trial < 60; ++trial) {
    const DocumentPage p = random_page(rng);
    const int gh = 1 + static_cast<int>(rng() % 64);
    const int gw = 1 + static_cast<int>(rng() % 64);
    const Chargrid fast = build_chargrid(p, v, gh, gw);
    const Chargrid slow = brute_force_chargrid(p, v, gh, gw);
    ASSERT_EQ(fast.cells, slow.cells) << "trial " << trial;
  }
}

TEST(DownsampleTokens, UniformAndIdentity) {
  Chargrid g(6, 6);
  g.cells.fill(7);
  const Chargrid d = downsample_tokens(g, 3, 2);
  for (std::int64_t i = 0; i < d.cells.numel(); ++i) EXPECT_EQ(d.cells[i], 7);
  Chargrid h(3, 3);
  for (int i = 0; i < 9; ++i) h.cells[i] = i;
  EXPECT_EQ(downsample_tokens(h, 3, 3).cells, h.cells);
}

TEST(DownsampleTokens, NearestNeighborIndexOracle) {
  // oracle: out(i,j) = in(floor((i+0.5)in_h/out_h), floor((j+0.5)in_w/out_w))
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const int ih = 1 + static_cast<int>(rng() % 12);
    const int iw = 1 + static_cast<int>(rng() % 12);
    Chargrid g(ih, iw);
    for (std::int64_t i = 0; i < g.cells.numel(); ++i) g.cells[i] = static_cast<int>(rng() % 30);
    const int oh = 1 + static_cast<int>(rng() % 12);
    const int ow = 1 + static_cast<int>(rng() % 12);
    const Chargrid d = downsample_tokens(g, oh, ow);
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        const int si = std::min(ih - 1, static_cast<int>((i + 0.5) * ih / oh));
        const int sj = std::min(iw - 1, static_cast<int>((j + 0.5) * iw / ow));
        EXPECT_EQ(d.cells.at(i, j), g.cells.at(si, sj));
      }
    }
  }
  // The 2x2 [[1,2],[3,4]] -> 1x1 case: the center sample (0.5*2=1.0) lands in
  // cell index 1 on both axes per the half-open floor rule, picking 4.
  Chargrid g(2, 2);
  g.cells[0] = 1;
  g.cells[1] = 2;
  g.cells[2] = 3;
  g.cells[3] = 4;
  EXPECT_EQ(downsample_tokens(g, 1, 1).cells[0], 4);
}

TEST(OneHot, BasicAndErrors) {
  Chargrid g(1, 2);
  g.cells[0] = 3;
  g.cells[1] = 0;
  const auto t = one_hot<float>(g, 5);
  EXPECT_EQ(t.shape, (std::vector<int>{1, 2, 5}));
  EXPECT_FLOAT_EQ(t.at(0, 0, 3), 1.0f);
  EXPECT_FLOAT_EQ(t.at(0, 0, 0), 0.0f);
  EXPECT_FLOAT_EQ(t.at(0, 1, 0), 1.0f);
  g.cells[0] = 5;
  EXPECT_THROW(one_hot<float>(g, 5), std::runtime_error);
}

TEST(OneHot, ChannelSumsToOneAndArgmaxRecovers) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 1 + static_cast<int>(rng() % 10);
    const int w = 1 + static_cast<int>(rng() % 10);
    Chargrid g(h, w);
    for (std::int64_t i = 0; i < g.cells.numel(); ++i) g.cells[i] = static_cast<int>(rng() % 9);
    const auto t = one_hot<float>(g, 9);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        float s = 0;
        for (int c = 0; c < 9; ++c) s += t.at(i, j, c);
        EXPECT_FLOAT_EQ(s, 1.0f);
      }
    }
    EXPECT_EQ(argmax_channels(t), g.cells);
  }
}

TEST(DownsampleBilinear, ConstantAndIdentity) {
  Tensor<float> t({3, 3, 2});
  t.fill(0.25f);
  const auto d = downsample_bilinear(t, 2, 5);
  for (const float v : d.data) EXPECT_FLOAT_EQ(v, 0.25f);
  const auto same = downsample_bilinear(t, 3, 3);
  EXPECT_EQ(same, t);
}

TEST(DownsampleBilinear, HandComputedUpsample) {
  // 2x1 channel [1,0] -> 4x1 with centers (i+0.5)*in/out - 0.5, edge clamped:
  // sources -0.25, 0.25, 0.75, 1.25 -> values 1, 0.75, 0.25, 0
  Tensor<float> t({2, 1, 1});
  t[0] = 1.0f;
  t[1] = 0.0f;
  const auto d = downsample_bilinear(t, 4, 1);
  EXPECT_FLOAT_EQ(d[0], 1.0f);
  EXPECT_FLOAT_EQ(d[1], 0.75f);
  EXPECT_FLOAT_EQ(d[2], 0.25f);
  EXPECT_FLOAT_EQ(d[3], 0.0f);
}

TEST(OnehotBilinear, BitIdenticalToDensePath) {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int ih = 2 + static_cast<int>(rng() % 14);
    const int iw = 2 + static_cast<int>(rng() % 14);
    Chargrid g(ih, iw);
    for (std::int64_t i = 0; i < g.cells.numel(); ++i) g.cells[i] = static_cast<int>(rng() % 6);
    const int oh = 1 + static_cast<int>(rng() % 10);
    const int ow = 1 + static_cast<int>(rng() % 10);
    const auto sparse = onehot_bilinear<float>(g, 6, oh, ow);
    const auto dense = downsample_bilinear(one_hot<float>(g, 6), oh, ow);
    EXPECT_EQ(sparse, dense);
  }
}

TEST(PrepareInput, EmptyPageIsPureBackground) {
  const Vocabulary v = ascii_vocab(12);
  const auto t = prepare_input<float>(page_with(64, 48, {}), v, 24, 16);
  for (int i = 0; i < 24; ++i) {
    for (int j = 0; j < 16; ++j) {
      EXPECT_FLOAT_EQ(t.at(i, j, 0), 1.0f);
      for (int c = 1; c < 12; ++c) EXPECT_FLOAT_EQ(t.at(i, j, c), 0.0f);
    }
  }
}

TEST(PrepareInput, MassConservationAndLocality) {
  const Vocabulary v = ascii_vocab(12);
  DocumentPage p = page_with(64, 64, {{U'a', 8, 8, 16, 16}});
  const auto t = prepare_input<float>(p, v, 32, 32);
  EXPECT_EQ(t.shape, (std::vector<int>{32, 32, 12}));
  const int a = v.encode(U'a');
  for (int i = 0; i < 32; ++i) {
    for (int j = 0; j < 32; ++j) {
      double s = 0;
      for (int c = 0; c < 12; ++c) s += t.at(i, j, c);
      EXPECT_NEAR(s, 1.0, 1e-5);
      // nonzero char mass only in/near the box region (page 8..24 -> cells 4..12)
      if (t.at(i, j, a) > 0.0f) {
        EXPECT_GE(i, 3);
        EXPECT_LE(i, 12);
        EXPECT_GE(j, 3);
        EXPECT_LE(j, 12);
      }
    }
  }
}

TEST(PrepareInput, DefaultShapeMatchesPaperResolution) {
  const Vocabulary v = ascii_vocab(54);
  DocumentPage p = page_with(672, 512, {{U'a', 100, 100, 40, 40}});
  const auto t = prepare_input<float>(p, v);
  EXPECT_EQ(t.shape, (std::vector<int>{336, 256, 54}));
}

// Lossless coarsening: when every box spans >= s x s page pixels and grid
// cells are at most s pixels, every character owns at least one cell.
TEST(BuildChargrid, LosslessCoarsening) {
  const Vocabulary v = ascii_vocab();
  Rng rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    DocumentPage p;
    p.page_w = 128;
    p.page_h = 128;
    const int s = 8;
    for (int k = 0; k < 12; ++k) {
      const int w = s + static_cast<int>(rng() % 10);
      const int h = s + static_cast<int>(rng() % 10);
      const int x = static_cast<int>(rng() % static_cast<unsigned>(p.page_w - w));
      const int y = static_cast<int>(rng() % static_cast<unsigned>(p.page_h - h));
      p.chars.push_back(CharBox{static_cast<char32_t>(U'a' + k % 26), x, y, w, h});
    }
    // grid cell size = 128/32 = 4 <= s
    const Tensor<int> owner = build_owner_grid(p, 32, 32);
    std::vector<bool> seen(p.chars.size(), false);
    for (std::int64_t i = 0; i < owner.numel(); ++i) {
      if (owner[i] >= 0) seen[static_cast<std::size_t>(owner[i])] = true;
    }
    for (std::size_t k = 0; k < seen.size(); ++k) {
      EXPECT_TRUE(seen[k]) << "char " << k << " lost at trial " << trial;
    }
  }
}
