#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <queue>
#include <set>

#include "scrl/dataset.hpp"
#include "scrl/env.hpp"
#include "scrl/errors.hpp"
#include "scrl/oracle.hpp"

namespace scrl::data {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "scrl_dataset_test";
  fs::create_directories(dir);
  return dir / name;
}

// A single trajectory 0, 1, ..., len on a 1-d store.
TrajectoryStore counting_store(size_t len) {
  TrajectoryStore store(env::ObsKind::features, 1, 1, {"point1", "scripted", 0});
  Trajectory t;
  for (size_t i = 0; i <= len; ++i) t.states.push_back(static_cast<float>(i));
  t.actions.assign(len, 0.0f);
  store.append(t);
  return store;
}

TEST(FuturePositive, GammaZeroReturnsNextState) {
  const auto store = counting_store(10);
  Rng rng = make_rng(1);
  for (size_t t = 0; t < 10; ++t) {
    const auto f = sample_future_positive(store, 0, t, 0.0, rng);
    EXPECT_EQ(f.offset, 1u);
    EXPECT_EQ(f.state[0], static_cast<float>(t + 1));
  }
}

TEST(FuturePositive, LastStepIsDegenerate) {
  const auto store = counting_store(5);
  Rng rng = make_rng(1);
  EXPECT_THROW(sample_future_positive(store, 0, 5, 0.9, rng), DegenerateTrajectory);
  EXPECT_THROW(sample_future_positive(store, 0, 0, 1.0, rng), InvalidArgument);
}

// Histogram of k against (1 - g) g^(k-1), normalized to the support.
void check_pmf(size_t len, size_t t, double g, uint64_t seed) {
  const auto store = counting_store(len);
  Rng rng = make_rng(seed);
  constexpr size_t n = 100000;
  const size_t remaining = len - t;
  std::vector<double> counts(remaining + 1, 0.0);
  for (size_t i = 0; i < n; ++i) {
    const auto f = sample_future_positive(store, 0, t, g, rng);
    ASSERT_GE(f.offset, 1u);
    ASSERT_LE(f.offset, remaining);
    ASSERT_EQ(f.state[0], static_cast<float>(t + f.offset));
    counts[f.offset] += 1;
  }
  const double z = 1.0 - std::pow(g, static_cast<double>(remaining));
  size_t outside3 = 0, cells = 0;
  for (size_t k = 1; k <= remaining; ++k) {
    const double p = (1 - g) * std::pow(g, static_cast<double>(k - 1)) / z;
    if (p * n < 5) continue;
    ++cells;
    const double se = std::sqrt(p * (1 - p) / n);
    const double dev = std::abs(counts[k] / n - p);
    EXPECT_LT(dev, 5 * se) << "k=" << k;
    if (dev > 3 * se) ++outside3;
  }
  EXPECT_LE(outside3, cells / 100 + 1);
}

TEST(FuturePositive, LongTrajectoryMatchesGeometric) { check_pmf(2000, 0, 0.9, 3); }

TEST(FuturePositive, TruncatedLawNearTrajectoryEnd) { check_pmf(100, 94, 0.9, 4); }

TEST(Generate, UniformRandomCoversReachableCells) {
  const auto g = std::make_shared<env::Gridworld>(5, 5, 0.0);
  const auto store = generate_offline(*g, Behavior::uniform_random(), 10000, 1);
  std::set<int> visited;
  for (size_t i = 0; i < store.num_trajectories(); ++i)
    for (size_t t = 0; t <= store.length(i); ++t) visited.insert(static_cast<int>(store.state(i, t)[0]));
  // BFS over deterministic moves from every visited start.
  std::set<int> reachable;
  std::queue<int> q;
  for (size_t i = 0; i < store.num_trajectories(); ++i) {
    const int s0 = static_cast<int>(store.state(i, 0)[0]);
    if (reachable.insert(s0).second) q.push(s0);
  }
  while (!q.empty()) {
    const int s = q.front();
    q.pop();
    for (int m = 0; m < 5; ++m) {
      const int n = g->move(s, m);
      if (reachable.insert(n).second) q.push(n);
    }
  }
  EXPECT_EQ(visited, reachable);
  EXPECT_EQ(reachable.size(), 25u);
}

TEST(Generate, DeterministicGivenSeed) {
  const auto g = env::make_gridworld(5, 5, 0.1);
  EXPECT_EQ(generate_offline(*g, Behavior::scripted(), 3000, 5),
            generate_offline(*g, Behavior::scripted(), 3000, 5));
  EXPECT_FALSE(generate_offline(*g, Behavior::scripted(), 3000, 5) ==
               generate_offline(*g, Behavior::scripted(), 3000, 6));
}

TEST(Generate, FullMixEqualsUniformRandom) {
  const auto g = env::make_gridworld(5, 5, 0.1);
  const auto a = generate_offline(*g, Behavior::uniform_random(), 2000, 8);
  const auto b = generate_offline(*g, Behavior::epsilon_mix(1.0), 2000, 8);
  ASSERT_EQ(a.num_trajectories(), b.num_trajectories());
  for (size_t i = 0; i < a.num_trajectories(); ++i) EXPECT_EQ(a.trajectory(i), b.trajectory(i));
}

TEST(Generate, TrajectoryStructure) {
  const auto g = env::make_gridworld(4, 4, 0.0, 30);
  const auto store = generate_offline(*g, Behavior::scripted(), 1000, 2);
  EXPECT_EQ(store.num_transitions(), 1000u);
  size_t total = 0;
  for (size_t i = 0; i < store.num_trajectories(); ++i) {
    EXPECT_LE(store.length(i), 30u);
    EXPECT_EQ(store.trajectory(i).states.size(), store.length(i) + 1);
    total += store.length(i);
  }
  EXPECT_EQ(total, 1000u);
  EXPECT_EQ(store.metadata().env_id, g->id());
  EXPECT_THROW(generate_offline(*g, Behavior::scripted(), 10, 2), InvalidArgument);
}

TEST(Generate, ScriptedTransitionsAreFeasible) {
  const auto g = std::make_shared<env::Gridworld>(5, 5, 0.0);
  const auto store = generate_offline(*g, Behavior::scripted(), 2000, 3);
  for (size_t i = 0; i < store.num_trajectories(); ++i)
    for (size_t t = 0; t < store.length(i); ++t) {
      const int s = static_cast<int>(store.state(i, t)[0]);
      const int a = static_cast<int>(store.action(i, t)[0]);
      EXPECT_EQ(static_cast<int>(store.state(i, t + 1)[0]), g->move(s, a));
    }
}

TEST(BehaviorParse, Names) {
  EXPECT_EQ(Behavior::parse("scripted").kind, Behavior::Kind::scripted);
  EXPECT_EQ(Behavior::parse("random").kind, Behavior::Kind::uniform_random);
  EXPECT_DOUBLE_EQ(Behavior::parse("mix:0.25").epsilon, 0.25);
  EXPECT_THROW(Behavior::parse("mix:2"), InvalidArgument);
  EXPECT_THROW(Behavior::parse("mix:x"), InvalidArgument);
  EXPECT_THROW(Behavior::parse("expert"), InvalidArgument);
}

TEST(Batch, RowsAreFuturePositivesFromTheirTrajectory) {
  const auto g = env::make_gridworld(5, 5, 0.1);
  const auto store = generate_offline(*g, Behavior::scripted(), 5000, 4);
  Rng rng = make_rng(0);
  const auto b = assemble_batch(store, *g, 64, 0.9, rng);
  ASSERT_EQ(b.size, 64u);
  EXPECT_EQ(b.states.shape(), (std::vector<size_t>{64, 25}));
  EXPECT_EQ(b.actions.shape(), (std::vector<size_t>{64, 5}));
  EXPECT_FALSE(b.with_replacement_warning);
  for (size_t i = 0; i < 64; ++i) {
    const size_t tr = b.trajectory_ids[i], t = b.times[i];
    EXPECT_EQ(b.raw_states[i], store.state_vector(tr, t));
    EXPECT_EQ(b.raw_next_states[i], store.state_vector(tr, t + 1));
    EXPECT_EQ(b.raw_goals[i], store.state_vector(tr, t + b.offsets[i]));
    EXPECT_EQ(b.states.row(i)[static_cast<size_t>(b.raw_states[i][0])], 1.0f);
    EXPECT_EQ(b.future_goals.row(i)[static_cast<size_t>(b.raw_goals[i][0])], 1.0f);
  }
}

TEST(Batch, DeterministicGivenRng) {
  const auto g = env::make_gridworld(5, 5, 0.1);
  const auto store = generate_offline(*g, Behavior::scripted(), 5000, 4);
  Rng r1 = make_rng(9), r2 = make_rng(9);
  const auto a = assemble_batch(store, *g, 32, 0.9, r1);
  const auto b = assemble_batch(store, *g, 32, 0.9, r2);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.future_goals, b.future_goals);
  EXPECT_EQ(a.actions, b.actions);
}

TEST(Batch, TinyStoreSamplesWithReplacement) {
  const auto store = counting_store(2);
  const auto pm = env::make_pointmass(1, 0.05, 0.0);
  std::set<float> seen;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed);
    const auto b = assemble_batch(store, *pm, 2, 0.5, rng);
    EXPECT_EQ(b.size, 2u);
    EXPECT_TRUE(b.with_replacement_warning);
    for (size_t i = 0; i < 2; ++i) {
      EXPECT_LT(b.times[i], 2u);
      seen.insert(b.states(i, 0));
    }
  }
  EXPECT_EQ(seen, (std::set<float>{0.0f, 1.0f}));
}

TEST(Batch, NextActionsComeFromTheLog) {
  const auto g = env::make_gridworld(4, 4, 0.0);
  const auto store = generate_offline(*g, Behavior::uniform_random(), 2000, 4);
  Rng rng = make_rng(2);
  const auto b = assemble_batch(store, *g, 128, 0.9, rng, {true});
  EXPECT_TRUE(b.has_next_actions);
  for (size_t i = 0; i < b.size; ++i) {
    ASSERT_LT(b.times[i] + 1, store.length(b.trajectory_ids[i]));
    const size_t a_next = static_cast<size_t>(store.action(b.trajectory_ids[i], b.times[i] + 1)[0]);
    EXPECT_EQ(b.next_actions(i, a_next), 1.0f);
  }
}

TEST(Batch, RejectsTinyBatches) {
  const auto store = counting_store(4);
  const auto pm = env::make_pointmass(1, 0.05, 0.0);
  Rng rng = make_rng(0);
  EXPECT_THROW(assemble_batch(store, *pm, 1, 0.5, rng), InvalidArgument);
}

// Empirical p(s_f | s, a) over many rows against the DP occupancy of the
// behavior policy; long trajectories make truncation negligible.
TEST(Batch, PositivesFollowOccupancy) {
  const auto g = env::make_gridworld(3, 3, 0.2, 4000);
  const auto store = generate_offline(*g, Behavior::uniform_random(), 400000, 6);
  const double gamma = 0.5;
  const auto occ = oracle::dp_occupancy(*g, oracle::TabularPolicy::uniform(9, 5), gamma);
  std::map<std::pair<int, int>, std::vector<double>> counts;
  Rng rng = make_rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    const auto b = assemble_batch(store, *g, 1000, gamma, rng);
    for (size_t i = 0; i < b.size; ++i) {
      auto& c = counts[{static_cast<int>(b.raw_states[i][0]), static_cast<int>(b.raw_actions[i][0])}];
      c.resize(9, 0.0);
      c[static_cast<size_t>(b.raw_goals[i][0])] += 1;
    }
  }
  EXPECT_EQ(counts.size(), 45u);
  size_t cells = 0, outside3 = 0;
  for (const auto& [sa, c] : counts) {
    double n = 0;
    for (double v : c) n += v;
    for (size_t sf = 0; sf < 9; ++sf) {
      const double p = occ(sa.first, sa.second, sf);
      const double se = std::sqrt(std::max(p * (1 - p), 1e-12) / n);
      const double dev = std::abs(c[sf] / n - p);
      ++cells;
      EXPECT_LT(dev, 5 * se + 1e-12);
      if (dev > 3 * se) ++outside3;
    }
  }
  EXPECT_LE(outside3, cells / 100 + 1);
}

TEST(Crop, CenterOffsetIsIdentity) {
  Rng rng = make_rng(0);
  std::vector<float> img(16 * 12 * 3);
  for (auto& v : img) v = static_cast<float>(uniform01(rng));
  EXPECT_EQ(crop_at(img, 16, 12, 3, 4, 4, 4), img);
}

TEST(Crop, ConstantImageIsInvariant) {
  const std::vector<float> img(10 * 10, 0.25f);
  Rng rng = make_rng(1);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(random_crop(img, 10, 10, 1, 4, rng), img);
}

TEST(Crop, EdgesReplicate) {
  // 3 x 3 ramp, pad 1, offset (0, 0): shifts down-right by one with edge copy.
  const std::vector<float> img{1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_EQ(crop_at(img, 3, 3, 1, 1, 0, 0), (std::vector<float>{1, 1, 2, 1, 1, 2, 4, 4, 5}));
  EXPECT_EQ(crop_at(img, 3, 3, 1, 1, 2, 2), (std::vector<float>{5, 6, 6, 8, 9, 9, 8, 9, 9}));
}

TEST(Crop, OffsetsAreUniform) {
  std::vector<float> img(8 * 8);
  for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i);
  std::map<std::vector<float>, int> hist;
  Rng rng = make_rng(3);
  for (int i = 0; i < 9000; ++i) ++hist[random_crop(img, 8, 8, 1, 1, rng)];
  EXPECT_EQ(hist.size(), 9u);
  for (const auto& [k, n] : hist) EXPECT_NEAR(n, 1000, 4 * std::sqrt(1000 * 8.0 / 9.0));
}

TEST(Crop, RejectsSmallImages) {
  const std::vector<float> img(6 * 6);
  EXPECT_THROW(crop_at(img, 6, 6, 1, 4, 0, 0), InvalidArgument);
  EXPECT_THROW(crop_at(img, 6, 6, 1, 2, 5, 0), InvalidArgument);
}

TEST(Store, RoundTripIsExact) {
  const auto g = env::make_gridworld(5, 5, 0.1);
  const auto store = generate_offline(*g, Behavior::scripted(), 3000, 2);
  const auto path = temp_path("roundtrip.bin");
  save_store(store, path);
  EXPECT_EQ(load_store(path), store);
  const auto pm = env::make_pointmass(2, 0.05, 0.01);
  const auto cont = generate_offline(*pm, Behavior::epsilon_mix(0.3), 500, 2);
  save_store(cont, path);
  EXPECT_EQ(load_store(path), cont);
}

TEST(Store, SameInputsSameBytes) {
  const auto g = env::make_gridworld(5, 5, 0.1);
  const auto a = temp_path("a.bin"), b = temp_path("b.bin");
  save_store(generate_offline(*g, Behavior::scripted(), 2000, 2), a);
  save_store(generate_offline(*g, Behavior::scripted(), 2000, 2), b);
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(fa), {}),
            std::string(std::istreambuf_iterator<char>(fb), {}));
}

TEST(Store, EmptyStoreRoundTrips) {
  const TrajectoryStore empty(env::ObsKind::tabular, 1, 1, {"grid3x3", "scripted", 0});
  const auto path = temp_path("empty.bin");
  save_store(empty, path);
  const auto back = load_store(path);
  EXPECT_EQ(back.num_trajectories(), 0u);
  EXPECT_EQ(back, empty);
}

TEST(Store, TruncatedFileIsCorrupt) {
  const auto g = env::make_gridworld(3, 3, 0.0);
  const auto path = temp_path("trunc.bin");
  save_store(generate_offline(*g, Behavior::scripted(), 500, 1), path);
  fs::resize_file(path, fs::file_size(path) - 7);
  EXPECT_THROW(load_store(path), CorruptFile);
  fs::resize_file(path, 3);
  EXPECT_THROW(load_store(path), CorruptFile);
}

TEST(Store, FlippedByteIsCorrupt) {
  const auto g = env::make_gridworld(3, 3, 0.0);
  const auto path = temp_path("flip.bin");
  save_store(generate_offline(*g, Behavior::scripted(), 500, 1), path);
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(200);
  f.put('\x7f');
  f.close();
  EXPECT_THROW(load_store(path), CorruptFile);
}

TEST(Store, BadMagicIsCorrupt) {
  const auto path = temp_path("magic.bin");
  std::ofstream(path, std::ios::binary) << "NOPE and some more bytes to read";
  EXPECT_THROW(load_store(path), CorruptFile);
}

TEST(Store, MissingOrUnwritablePathIsIoError) {
  EXPECT_THROW(load_store(temp_path("does_not_exist.bin")), IoError);
  const TrajectoryStore empty(env::ObsKind::tabular, 1, 1, {});
  EXPECT_THROW(save_store(empty, "/nonexistent_dir/x/store.bin"), IoError);
}

}  // namespace
}  // namespace scrl::data
