#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>
#include <tuple>

#include "hvae/error.hpp"
#include "hvae/synthworld.hpp"

using namespace hvae;
using namespace hvae::synth;

namespace {

WorldConfig world_at(int res, int T = 8, int K = 3) { return {T, K, res}; }

std::uint32_t u32_at(const std::string& s, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, s.data() + at, 4);
  return v;
}

}  // namespace

TEST_CASE("identities split into shape and hue") {
  std::set<std::pair<int, int>> seen;
  for (int id = 0; id < kIdentities; ++id) {
    const auto c = ContentFactors::from_identity(id);
    CHECK(c.identity() == id);
    seen.emplace(static_cast<int>(c.shape), c.hue);
  }
  CHECK(seen.size() == 18u);
  CHECK_THROWS_AS(ContentFactors::from_identity(18), IndexError);
  CHECK_THROWS_AS(ContentFactors::from_identity(-1), IndexError);

  // held-out identities cover each shape once and never share a hue
  std::set<int> shapes, hues;
  for (const int id : eval_identities()) {
    shapes.insert(id / kHues);
    hues.insert(id % kHues);
  }
  CHECK(shapes.size() == 3u);
  CHECK(hues.size() == 3u);
}

TEST_CASE("frames use only background and the hue colour") {
  const auto w = world_at(16);
  for (int id = 0; id < kIdentities; ++id) {
    const auto c = ContentFactors::from_identity(id);
    const auto rgb = hue_rgb(c.hue);
    for (int a = 0; a < 3; ++a) {
      const auto f = render_frame(c, static_cast<ActionKind>(a), 3, w);
      REQUIRE(f.shape() == nn::Shape{3, 16, 16});
      int fg = 0;
      for (int i = 0; i < 256; ++i) {
        const bool bg = f[i] == -1.0f && f[256 + i] == -1.0f && f[512 + i] == -1.0f;
        const bool obj = f[i] == rgb[0] && f[256 + i] == rgb[1] && f[512 + i] == rgb[2];
        CHECK((bg || obj));
        fg += obj && !bg;
      }
      CHECK(fg > 4);
      CHECK(fg < 128);
    }
  }
}

TEST_CASE("rasterised areas match the continuous shapes") {
  // At 128 px the pixel grid is fine enough that counts approach the analytic areas.
  const auto w = world_at(128);
  const double px = (128.0 / 16.0) * (128.0 / 16.0);
  const double r = 3.0;
  // orbit uses the base radius, so compare there
  const auto disc = render_frame({ShapeKind::Disc, 0}, ActionKind::Orbit, 1, w);
  const auto square = render_frame({ShapeKind::Square, 0}, ActionKind::Orbit, 1, w);
  const auto cross = render_frame({ShapeKind::Cross, 0}, ActionKind::Orbit, 1, w);
  CHECK(object_area(disc) / px == doctest::Approx(std::numbers::pi * r * r).epsilon(0.02));
  CHECK(object_area(square) / px == doctest::Approx(4 * r * r).epsilon(0.03));
  // two 2r x 2r/3 arms overlapping in a 2r/3 square
  const double arm = 2 * r * (2 * r / 3);
  CHECK(object_area(cross) / px == doctest::Approx(2 * arm - (2 * r / 3) * (2 * r / 3)).epsilon(0.05));
}

TEST_CASE("pulse swings area by a factor of two") {
  // The disc hits 2:1 exactly on the native grid; squares and crosses quantise
  // to the nearest whole-pixel extents, so they only land near it.
  const auto native = world_at(16);
  for (int s = 0; s < kShapes; ++s) {
    const ContentFactors c{static_cast<ShapeKind>(s), 1};
    const double big = object_area(render_frame(c, ActionKind::Pulse, 0, native));
    const double small = object_area(render_frame(c, ActionKind::Pulse, 4, native));
    CHECK(big / small == doctest::Approx(2.0).epsilon(s == 1 ? 1e-12 : 0.2));
  }
  for (const int res : {64, 128}) {
    const ContentFactors disc{ShapeKind::Disc, 1};
    const double big = object_area(render_frame(disc, ActionKind::Pulse, 0, world_at(res)));
    const double small = object_area(render_frame(disc, ActionKind::Pulse, 4, world_at(res)));
    CHECK(big / small == doctest::Approx(2.0).epsilon(0.02));
  }
  const double a = pulse_amplitude();
  CHECK(std::pow((1 + a) / (1 - a), 2) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("orbit keeps its centre on a circle") {
  const auto w = world_at(128);
  for (int ph = 0; ph < 8; ++ph) {
    const auto f = render_frame({ShapeKind::Disc, 2}, ActionKind::Orbit, ph, w);
    double sx = 0, sy = 0;
    int n = 0;
    for (int y = 0; y < 128; ++y)
      for (int x = 0; x < 128; ++x)
        if (f[256 * 64 + y * 128 + x] != -1.0f) {  // green channel
          sx += x + 0.5;
          sy += y + 0.5;
          ++n;
        }
    const double cx = sx / n / 8.0 - 8.0, cy = sy / n / 8.0 - 8.0;
    CHECK(std::hypot(cx, cy) == doctest::Approx(4.0).epsilon(0.01));
    CHECK(std::remainder(std::atan2(cy, cx) - 2 * std::numbers::pi * ph / 8, 2 * std::numbers::pi) == doctest::Approx(0.0).epsilon(0.01));
  }
}

TEST_CASE("phase is periodic") {
  // Pulse and slide are cosine-driven, so phase p and T - p share a frame.
  const auto w = world_at(16);
  for (int id = 0; id < kIdentities; ++id) {
    const auto c = ContentFactors::from_identity(id);
    for (int a = 0; a < 3; ++a) {
      const auto act = static_cast<ActionKind>(a);
      for (int ph = 0; ph < 8; ++ph) {
        const auto f = render_frame(c, act, ph, w);
        CHECK(f == render_frame(c, act, ph + 8, w));
        CHECK(f == render_frame(c, act, ph - 8, w));
        if (act != ActionKind::Orbit) CHECK(f == render_frame(c, act, 8 - ph, w));
      }
    }
  }
}

TEST_CASE("distinct poses per period") {
  // 128 px so that neighbouring pulse sizes do not round to the same raster;
  // at 16 px a square only takes two sizes.
  const auto w = world_at(128);
  for (int s = 0; s < kShapes; ++s) {
    const ContentFactors c{static_cast<ShapeKind>(s), 0};
    for (int a = 0; a < 3; ++a) {
      const auto act = static_cast<ActionKind>(a);
      std::set<std::vector<float>> distinct;
      for (int ph = 0; ph < 8; ++ph) {
        const auto f = render_frame(c, act, ph, w);
        distinct.emplace(f.values().begin(), f.values().end());
      }
      CHECK(distinct.size() == (act == ActionKind::Orbit ? 8u : 5u));
    }
  }
}

TEST_CASE("pulse stays centred and slide stays on the midline") {
  const auto w = world_at(128);
  for (int ph = 0; ph < 8; ++ph) {
    for (const auto act : {ActionKind::Pulse, ActionKind::Slide}) {
      const auto f = render_frame({ShapeKind::Disc, 2}, act, ph, w);
      double sx = 0, sy = 0;
      int n = 0;
      for (int y = 0; y < 128; ++y)
        for (int x = 0; x < 128; ++x)
          if (f[256 * 64 + y * 128 + x] != -1.0f) {
            sx += x + 0.5;
            sy += y + 0.5;
            ++n;
          }
      CHECK(sy / n / 8.0 == doctest::Approx(8.0).epsilon(1e-3));
      if (act == ActionKind::Pulse) CHECK(sx / n / 8.0 == doctest::Approx(8.0).epsilon(1e-3));
    }
  }
}

TEST_CASE("sequences advance one phase per frame") {
  const auto w = world_at(16);
  const ContentFactors c{ShapeKind::Cross, 5};
  const auto seq = render_sequence(c, ActionKind::Slide, 6, 11, w);
  REQUIRE(seq.shape() == nn::Shape{11, 3, 16, 16});
  for (int t = 0; t < 11; ++t) {
    const auto f = render_frame(c, ActionKind::Slide, (6 + t) % 8, w);
    CHECK(std::equal(f.values().begin(), f.values().end(), seq.data() + t * 768));
  }
}

TEST_CASE("world config is checked") {
  CHECK_THROWS_AS(render_frame({}, ActionKind::Orbit, 0, world_at(16, 8, 4)), ContractError);
  CHECK_THROWS_AS(render_frame({}, ActionKind::Orbit, 0, world_at(16, 1)), ContractError);
  CHECK_THROWS_AS(make_datasets(3, 3, 0, world_at(16, 8, 0)), ContractError);
}

TEST_CASE("datasets are balanced, identity-disjoint and reproducible") {
  const auto pair = make_datasets(100, 40, 11);
  const auto again = make_datasets(100, 40, 11);
  CHECK(pair.train == again.train);
  CHECK(pair.eval == again.eval);
  CHECK_FALSE(pair.train == make_datasets(100, 40, 12).train);

  REQUIRE(pair.train.size() == 100);
  REQUIRE(pair.eval.size() == 40);
  for (const Dataset* ds : {&pair.train, &pair.eval}) {
    std::map<int, int> counts;
    std::set<std::tuple<int, int, int>> keys;
    for (int i = 0; i < ds->size(); ++i) {
      const auto& r = ds->records[static_cast<std::size_t>(i)];
      counts[r.action]++;
      CHECK(keys.emplace(r.action, r.identity, r.phase).second);
      const bool held_out = is_eval_identity(r.identity);
      CHECK(held_out == (ds == &pair.eval));
      // stored frames are exactly the rendered sequence
      const auto ref = render_sequence(ContentFactors::from_identity(r.identity), static_cast<ActionKind>(r.action),
                                       r.phase, ds->T, ds->world());
      CHECK(ds->sequence(i) == ref);
    }
    REQUIRE(counts.size() == 3u);
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end(),
                                              [](const auto& a, const auto& b) { return a.second < b.second; });
    CHECK(hi->second - lo->second <= 1);
  }
}

TEST_CASE("capacity limits are enforced") {
  // 15 training identities x 8 phases per action, 3 held out
  CHECK_NOTHROW(make_datasets(360, 72, 0));
  CHECK_THROWS_AS(make_datasets(361, 0, 0), CapacityError);
  CHECK_THROWS_AS(make_datasets(0, 73, 0), CapacityError);
  CHECK_THROWS_AS(make_datasets(400, 100, 0), CapacityError);
  CHECK_THROWS_AS(make_datasets(-1, 0, 0), CapacityError);
  const auto full = make_datasets(360, 72, 0);
  std::set<std::tuple<int, int, int>> keys;
  for (const auto& r : full.train.records) keys.emplace(r.action, r.identity, r.phase);
  CHECK(keys.size() == 360u);
}

TEST_CASE("SEQD layout and round trip") {
  const auto ds = make_datasets(7, 2, 3, world_at(8, 4, 2)).train;
  const std::string bytes = encode_dataset(ds);
  CHECK(bytes.substr(0, 8) == "SEQD0001");
  CHECK(u32_at(bytes, 8) == 7u);
  CHECK(u32_at(bytes, 12) == 4u);
  CHECK(u32_at(bytes, 16) == 3u);
  CHECK(u32_at(bytes, 20) == 8u);
  CHECK(u32_at(bytes, 24) == 8u);
  CHECK(u32_at(bytes, 28) == 2u);
  CHECK(bytes.size() == 32 + 7 * (5 + 4 * 3 * 8 * 8 * 4));
  // first record header sits right after the file header
  std::uint16_t action;
  std::memcpy(&action, bytes.data() + 32, 2);
  CHECK(action == ds.records[0].action);
  CHECK(static_cast<std::uint8_t>(bytes[36]) == ds.records[0].phase);

  const auto back = decode_dataset(bytes);
  CHECK(back == ds);
  CHECK(encode_dataset(back) == bytes);

  const auto dir = std::filesystem::temp_directory_path() / "hvae_synth_test";
  make_dataset_files(dir.string(), 7, 2, 3, world_at(8, 4, 2));
  CHECK(load_dataset((dir / "train.seqd").string()) == ds);
  CHECK(load_dataset((dir / "eval.seqd").string()).size() == 2);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_dataset((dir / "missing.seqd").string()), IoError);
}

TEST_CASE("SEQD rejects malformed input") {
  const auto ds = make_datasets(3, 0, 5, world_at(8, 4, 2)).train;
  const std::string good = encode_dataset(ds);

  auto offset_of = [](const std::string& b) -> std::uint64_t {
    try {
      decode_dataset(b);
    } catch (const FormatError& e) {
      return e.offset();
    }
    FAIL("no FormatError");
    return 0;
  };

  std::string bad = good;
  bad[0] = 'X';
  CHECK(offset_of(bad) == 0);
  bad = good;
  bad[7] = '2';
  CHECK(offset_of(bad) == 4);
  CHECK(offset_of(good.substr(0, 5)) == 0);
  CHECK(offset_of(good.substr(0, 20)) == 20);
  CHECK(offset_of(good.substr(0, good.size() - 1)) == 32);
  CHECK(offset_of(good + "xx") == good.size());

  bad = good;
  bad[32] = 9;  // action label past K
  CHECK(offset_of(bad) == 34);
  bad = good;
  bad[36] = 4;  // phase offset == T
  CHECK(offset_of(bad) == 37);
  bad = good;
  std::memset(bad.data() + 20, 0, 4);  // H = 0
  CHECK(offset_of(bad) == 24);
}

TEST_CASE("batch stream covers each epoch once in seeded order") {
  const auto ds = make_datasets(10, 0, 1, world_at(8, 4, 2)).train;
  BatchStream a(ds, 3, 42), b(ds, 3, 42), c(ds, 3, 43);
  std::vector<int> seen_a, seen_c;
  for (int i = 0; i < 10; ++i) {
    const auto ia = a.next_indices();
    CHECK(ia == b.next_indices());
    seen_a.insert(seen_a.end(), ia.begin(), ia.end());
    const auto ic = c.next_indices();
    seen_c.insert(seen_c.end(), ic.begin(), ic.end());
  }
  CHECK(seen_a != seen_c);
  for (int e = 0; e < 3; ++e) {
    std::vector<int> epoch(seen_a.begin() + e * 10, seen_a.begin() + (e + 1) * 10);
    CHECK(epoch == epoch_order(10, 42, static_cast<std::uint64_t>(e)));
    std::sort(epoch.begin(), epoch.end());
    for (int i = 0; i < 10; ++i) CHECK(epoch[static_cast<std::size_t>(i)] == i);
  }
  CHECK(epoch_order(10, 42, 0) != epoch_order(10, 42, 1));

  BatchStream d(ds, 3, 42);
  d.skip(4);
  BatchStream e(ds, 3, 42);
  for (int i = 0; i < 4; ++i) e.next();
  CHECK(d.next_indices() == e.next_indices());

  const auto batch = BatchStream(ds, 4, 7).next();
  CHECK(batch.images.shape() == nn::Shape{4, 4, 3, 8, 8});
  CHECK(batch.actions.shape() == nn::Shape{4, 2});
  for (int j = 0; j < 4; ++j) {
    CHECK(batch.actions[static_cast<std::size_t>(j * 2 + batch.labels[static_cast<std::size_t>(j)])] == 1.0f);
    CHECK(batch.actions[static_cast<std::size_t>(j * 2 + 1 - batch.labels[static_cast<std::size_t>(j)])] == 0.0f);
  }
  CHECK_THROWS_AS(BatchStream(ds, 0, 1), ContractError);
}
