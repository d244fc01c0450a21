#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "graphseg/datasets.hpp"

using namespace graphseg;

namespace {

GranularityMap find_map(const std::string& name) {
    for (auto& g : standard_granularities())
        if (g.name == name) return g;
    throw std::runtime_error("no map " + name);
}

std::filesystem::path temp_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("graphseg_ds_" + tag);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("standard granularities: nested vocabularies with paper class counts") {
    const auto maps = standard_granularities();
    REQUIRE(maps.size() == 5);
    std::map<std::string, int> counts;
    for (const auto& g : maps) {
        counts[g.name] = g.class_count;
        CHECK(g.mapping.size() == kFinePartCount);         // total over the fine vocabulary
        CHECK(g.mapping[kBackground] == 0);                // background maps to background
        CHECK(g.class_names.size() == static_cast<std::size_t>(g.class_count));
        for (int m : g.mapping) {
            CHECK(m >= 0);
            CHECK(m < g.class_count);
        }
    }
    CHECK(counts["Truck"] == 2);
    CHECK(counts["TruckCrane"] == 3);
    CHECK(counts["Low"] == 8);
    CHECK(counts["Medium"] == 16);
    CHECK(counts["High"] == 22);
}

TEST_CASE("remap_granularity: table lookup, identity, range error") {
    LabelMask fine(8, 8, 0);
    fine.set(1, 1, kCab);
    fine.set(2, 2, kArmLink2);
    fine.set(3, 3, kPlatform);

    const auto truck = remap_granularity(fine, find_map("Truck"));
    CHECK(truck.at(1, 1) == 1);
    CHECK(truck.at(2, 2) == 1);
    CHECK(truck.at(0, 0) == 0);

    const auto tc = remap_granularity(fine, find_map("TruckCrane"));
    CHECK(tc.at(1, 1) == 1);  // cab -> truck
    CHECK(tc.at(2, 2) == 2);  // arm link -> crane
    CHECK(tc.at(3, 3) == 1);  // platform -> truck

    const auto medium = remap_granularity(fine, find_map("Medium"));
    CHECK(medium.data == fine.data);  // identity padding

    LabelMask bad(8, 8, 0);
    bad.set(0, 0, 12);
    CHECK_THROWS_AS(remap_granularity(bad, find_map("Truck")), LabelRangeError);
}

TEST_CASE("granularity composition: coarse maps factor through Medium") {
    // Medium is the identity on the fine vocabulary, so High -> Medium -> X
    // must equal the direct fine -> X remap for every level X.
    LabelMask fine(16, 16, 0);
    for (int i = 0; i < kFinePartCount; ++i) fine.set(i, i, static_cast<std::uint8_t>(i));
    const auto via_medium = remap_granularity(fine, find_map("Medium"));
    for (const auto& name : {"Truck", "TruckCrane", "Low"}) {
        const auto direct = remap_granularity(fine, find_map(name));
        const auto composed = remap_granularity(via_medium, find_map(name));
        CHECK(direct.data == composed.data);
    }
    // Low -> TruckCrane with the induced coarse-to-coarse table.
    const auto low = remap_granularity(fine, find_map("Low"));
    GranularityMap low_to_tc;
    low_to_tc.name = "LowToTruckCrane";
    low_to_tc.class_count = 3;
    low_to_tc.mapping = {0, 1, 1, 1, 2, 2, 2, 1};  // bg, base, cab, wheel, arms, hook -> crane, platform
    low_to_tc.class_names = {"background", "truck", "crane"};
    const auto direct_tc = remap_granularity(fine, find_map("TruckCrane"));
    CHECK(remap_granularity(low, low_to_tc).data == direct_tc.data);
}

TEST_CASE("generate_scene: deterministic, all parts present, near-constant part colors") {
    SceneSpec spec;
    spec.distractor_count = 0;
    const auto [img_a, mask_a] = generate_scene(spec, 160, 160);
    const auto [img_b, mask_b] = generate_scene(spec, 160, 160);
    CHECK(img_a == img_b);
    CHECK(mask_a == mask_b);

    std::set<int> labels(mask_a.data.begin(), mask_a.data.end());
    for (int part = 0; part < kFinePartCount; ++part) CHECK(labels.count(part) == 1);

    // Colors within a part stay near the palette entry.
    for (int y = 0; y < 160; ++y)
        for (int x = 0; x < 160; ++x) {
            const auto c = img_a.rgb(x, y);
            std::array<std::uint8_t, 3> expected = spec.palette[mask_a.at(x, y)];
            for (int ch = 0; ch < 3; ++ch)
                CHECK(std::abs(static_cast<int>(c[ch]) - expected[ch]) <= 7);
        }
}

TEST_CASE("generate_scene: distractor blobs texture the background without touching labels") {
    SceneSpec plain;
    plain.distractor_count = 0;
    SceneSpec cluttered = plain;
    cluttered.distractor_count = 3;
    const auto [img_p, mask_p] = generate_scene(plain, 160, 160);
    const auto [img_c, mask_c] = generate_scene(cluttered, 160, 160);
    CHECK(mask_p.data == mask_c.data);  // labels identical

    // Distractor pixels sit on the background and differ from the plain render.
    std::size_t changed = 0;
    for (int y = 0; y < 160; ++y)
        for (int x = 0; x < 160; ++x)
            if (img_p.rgb(x, y) != img_c.rgb(x, y)) {
                REQUIRE(mask_c.at(x, y) == kBackground);
                ++changed;
            }
    CHECK(changed > 100);

    // No distractor pixel triggers a logit color key (all keys are full-
    // brightness palette colors; distractors are dimmed).
    const auto keys = standard_color_keys().at("TruckCrane");
    for (int y = 0; y < 160; ++y)
        for (int x = 0; x < 160; ++x) {
            if (img_p.rgb(x, y) == img_c.rgb(x, y)) continue;
            for (const auto& [name, rgb] : keys)
                REQUIRE(color_distance(img_c.rgb(x, y), rgb) > 40.0);
        }
}

TEST_CASE("generate_scene: arm articulation only moves arm pixels") {
    SceneSpec a;
    SceneSpec b = a;
    b.link_angle[1] = a.link_angle[1] + 0.35;
    const auto [img_a, mask_a] = generate_scene(a, 160, 160);
    const auto [img_b, mask_b] = generate_scene(b, 160, 160);

    const std::set<int> arm_parts = {kArmLink1, kArmLink2, kArmLink3, kHook};
    for (int y = 0; y < 160; ++y)
        for (int x = 0; x < 160; ++x) {
            if (mask_a.at(x, y) == mask_b.at(x, y)) continue;
            const bool arm_involved =
                arm_parts.count(mask_a.at(x, y)) || arm_parts.count(mask_b.at(x, y));
            REQUIRE(arm_involved);
        }
    // Base-region pixels are identical in both renders.
    for (int y = 0; y < 160; ++y)
        for (int x = 0; x < 160; ++x)
            if (mask_a.at(x, y) == kBase && mask_b.at(x, y) == kBase)
                REQUIRE(img_a.rgb(x, y) == img_b.rgb(x, y));
}

TEST_CASE("generate_scene: out-of-canvas spec is rejected") {
    SceneSpec spec;
    spec.link_len = {0.8, 0.8, 0.8};  // arm reaches far outside
    CHECK_THROWS_AS(generate_scene(spec, 160, 160), InvalidInputError);
}

TEST_CASE("generate_scene: hollow platform variant has a hole") {
    SceneSpec spec;
    spec.hollow_platform = true;
    const auto [img, mask] = generate_scene(spec, 160, 160);
    // Some background pixels must sit strictly inside the platform bbox.
    int min_x = 1 << 20, max_x = -1, min_y = 1 << 20, max_y = -1;
    for (int y = 0; y < 160; ++y)
        for (int x = 0; x < 160; ++x)
            if (mask.at(x, y) == kPlatform) {
                min_x = std::min(min_x, x);
                max_x = std::max(max_x, x);
                min_y = std::min(min_y, y);
                max_y = std::max(max_y, y);
            }
    REQUIRE(max_x > min_x);
    bool hole = false;
    for (int y = min_y + 1; y < max_y && !hole; ++y)
        for (int x = min_x + 1; x < max_x && !hole; ++x)
            hole = mask.at(x, y) == kBackground;
    CHECK(hole);
}

TEST_CASE("sample_scene_spec: deterministic and in-canvas") {
    Rng a(5), b(5);
    for (int i = 0; i < 10; ++i) {
        const auto sa = sample_scene_spec(a);
        const auto sb = sample_scene_spec(b);
        CHECK(sa.base_cx == sb.base_cx);
        CHECK(sa.link_angle == sb.link_angle);
        CHECK(sa.texture_seed == sb.texture_seed);
        CHECK_NOTHROW(generate_scene(sa, 160, 160));
    }
}

TEST_CASE("sample_splits: disjoint supports, fixed test remainder") {
    const auto splits = sample_splits(100, 10, 5, 99);
    REQUIRE(splits.size() == 5);
    std::set<int> seen;
    for (const auto& s : splits) {
        CHECK(s.support.size() == 10);
        CHECK(s.test.size() == 50);
        CHECK(s.test == splits[0].test);  // fixed across folds
        for (int idx : s.support) {
            CHECK(seen.insert(idx).second);  // disjoint across folds
            CHECK(std::find(s.test.begin(), s.test.end(), idx) == s.test.end());
        }
    }
    const auto again = sample_splits(100, 10, 5, 99);
    for (int f = 0; f < 5; ++f) {
        CHECK(again[f].support == splits[f].support);
        CHECK(again[f].test == splits[f].test);
    }
    const auto other_seed = sample_splits(100, 10, 5, 100);
    CHECK(other_seed[0].support != splits[0].support);
}

TEST_CASE("sample_splits: single-shot supports and error paths") {
    const auto splits = sample_splits(20, 1, 3, 1);
    for (const auto& s : splits) CHECK(s.support.size() == 1);
    CHECK_THROWS_AS(sample_splits(10, 10, 1, 0), ConfigError);   // n >= dataset
    CHECK_THROWS_AS(sample_splits(10, 2, 5, 0), ConfigError);    // empty remainder
    CHECK_THROWS_AS(sample_splits(10, 0, 1, 0), ConfigError);
}

TEST_CASE("sequence_frames: F, FL, FLM with collapse") {
    CHECK(sequence_frames(81, SequenceProtocol::F) == std::vector<int>{0});
    CHECK(sequence_frames(81, SequenceProtocol::FL) == std::vector<int>{0, 80});
    CHECK(sequence_frames(81, SequenceProtocol::FLM) == std::vector<int>{0, 40, 80});
    CHECK(sequence_frames(1, SequenceProtocol::FL) == std::vector<int>{0});
    CHECK(sequence_frames(1, SequenceProtocol::FLM) == std::vector<int>{0});
    CHECK(sequence_frames(2, SequenceProtocol::FLM) == std::vector<int>{0, 1});
    CHECK(sequence_frames(3, SequenceProtocol::FLM) == std::vector<int>{0, 1, 2});
    CHECK_THROWS_AS(sequence_frames(0, SequenceProtocol::F), ConfigError);
    CHECK(sequence_protocol_from_string("FLM") == SequenceProtocol::FLM);
    CHECK_THROWS_AS(sequence_protocol_from_string("XYZ"), ConfigError);
}

TEST_CASE("dataset round-trip through the on-disk layout") {
    const auto dir = temp_dir("roundtrip");
    const auto ds = generate_dataset(dir.string(), 3, 96, 96, 42);
    REQUIRE(ds.size() == 3);
    CHECK(std::filesystem::exists(dir / "images" / "0000.png"));
    CHECK(std::filesystem::exists(dir / "masks" / "0002.png"));
    CHECK(std::filesystem::exists(dir / "granularity.json"));

    const auto loaded = load_dataset(dir.string());
    CHECK(loaded.size() == 3);
    CHECK(loaded.meta().granularities.size() == 5);
    CHECK(loaded.meta().color_keys.at("TruckCrane").count("crane") == 1);

    const auto img = loaded.load_image(1);
    const auto mask = loaded.load_mask(1);
    CHECK(img.width == 96);
    CHECK(mask.height == 96);
    std::set<int> labels(mask.data.begin(), mask.data.end());
    CHECK(labels.count(kBase) == 1);

    // Pixel-exact persistence: regenerate the same scene and compare.
    Rng rng(42);
    sample_scene_spec(rng);  // skip index 0
    const auto spec = sample_scene_spec(rng);
    const auto [ref_img, ref_mask] = generate_scene(spec, 96, 96);
    CHECK(ref_img == img);
    CHECK(ref_mask == mask);

    CHECK_THROWS_AS(loaded.load_image(7), ConfigError);  // missing file names the path
    std::filesystem::remove_all(dir);
}

TEST_CASE("part pixel counts exceed zero for every declared part over random specs") {
    Rng rng(2718);
    for (int trial = 0; trial < 8; ++trial) {
        const auto spec = sample_scene_spec(rng);
        const auto [img, mask] = generate_scene(spec, 160, 160);
        std::vector<int> counts(kFinePartCount, 0);
        for (auto v : mask.data) ++counts[v];
        for (int part = 0; part < kFinePartCount; ++part) {
            if (part == kArmLink3 && spec.num_links < 3) continue;
            CHECK(counts[part] > 0);
        }
    }
}

TEST_CASE("palette separation supports the mock color rules") {
    const auto& pal = default_palette();
    for (std::size_t a = 0; a < pal.size(); ++a)
        for (std::size_t b = a + 1; b < pal.size(); ++b)
            CHECK(color_distance(pal[a], pal[b]) >= 75.0);
}
