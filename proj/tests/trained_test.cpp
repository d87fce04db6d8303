// Properties that only hold for trained victims; weights come from the
// acceptance prepare step.

#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "seqadv/attacks.hpp"
#include "seqadv/bench.hpp"
#include "seqadv/ctc.hpp"
#include "seqadv/victims.hpp"

using namespace seqadv;
namespace fs = std::filesystem;

namespace {

fs::path mnist_dir() {
  if (const char* env = std::getenv("SEQADV_MNIST_DIR")) return env;
  return SEQADV_MNIST_DIR;
}

const victims::Model& seqnet() {
  static const victims::Model m =
      victims::load(fs::path(SEQADV_ACCEPTANCE_DIR) / "seqnet.bin", victims::ModelKind::seqnet);
  return m;
}

// First frame of each emitted symbol in a best-path alignment.
std::vector<int> onsets(const ctc::Path& path) {
  std::vector<int> out;
  for (std::size_t t = 0; t < path.size(); ++t) {
    if (path[t] != ctc::kBlank && (t == 0 || path[t] != path[t - 1])) out.push_back(static_cast<int>(t));
  }
  return out;
}

grad::Tensor shift_right(const grad::Tensor& x, std::size_t px) {
  const std::size_t h = x.shape()[0], w = x.shape()[1];
  grad::Tensor out({h, w}, -1.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t c = px; c < w; ++c) out[y * w + c] = x[y * w + c - px];
  }
  return out;
}

}  // namespace

TEST(TrainedSeqNet, FourPixelShiftMovesAlignmentOneFrame) {
  const auto held = bench::held_out_seqmnist(mnist_dir());
  std::size_t digits = 0, moved = 0;
  for (const auto& s : held) {
    const auto& last = s.placements.back();
    if (last.left + last.width + 4 > data::kSeqWidth) continue;  // keep the whole strip in frame
    const auto before = ctc::alignment(victims::forward_seq(seqnet(), s.pixels));
    const auto after = ctc::alignment(victims::forward_seq(seqnet(), shift_right(s.pixels, 4)));
    if (ctc::collapse(before) != victims::encode_digits(s.digits)) continue;
    const auto a = onsets(before), b = onsets(after);
    digits += a.size();
    if (ctc::collapse(after) != ctc::collapse(before)) continue;
    for (std::size_t i = 0; i < a.size(); ++i) moved += b[i] - a[i] == 1;
    if (digits >= 600) break;
  }
  ASSERT_GE(digits, 300u);
  EXPECT_GE(static_cast<double>(moved) / static_cast<double>(digits), 0.70) << moved << " of " << digits;
}

TEST(TrainedSeqNet, AdaptiveAlignmentLocksEarly) {
  const auto samples = bench::correct_samples(seqnet(), mnist_dir(), 50);
  const auto method = bench::parse_method("adaptive");
  const auto edits = bench::parse_edits("insert,insert_repeat,substitute,delete");
  std::size_t successes = 0, early = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto target = bench::make_target(samples[i].label, edits[i % edits.size()], 3, samples[i].id);
    auto cfg = bench::config_for(victims::ModelKind::seqnet, method);
    cfg.record_trace = true;
    const auto r = bench::attack(seqnet(), samples[i], target, method, cfg);
    if (!r.success) continue;
    ++successes;
    for (const auto& rec : r.trace) {
      if (rec.decoded == target) {
        early += rec.iter < 1000;
        break;
      }
    }
  }
  ASSERT_GT(successes, 0u);
  EXPECT_GE(static_cast<double>(early), 0.8 * static_cast<double>(successes)) << early << " of " << successes;
}
