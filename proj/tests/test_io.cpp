#include <gtest/gtest.h>

#include "recam/io.hpp"
#include "recam/pipeline.hpp"
#include "recam/plot.hpp"

using namespace recam;
using namespace recam::io;

namespace {

fs::path scratch_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("recam_io_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

DatasetSpec tiny_spec() {
    DatasetSpec d;
    d.num_classes = 3;
    d.confusable_groups = {{0, 1}};
    d.height = d.width = 16;
    d.max_objects_per_image = 2;
    return d;
}

} // namespace

TEST(Sha256, KnownVector) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(AtomicWrite, CreatesParentsAndLeavesNoTemporary) {
    const auto dir = scratch_dir("atomic");
    const auto p = dir / "a" / "b" / "file.txt";
    atomic_write(p, "one");
    atomic_write(p, "two");
    EXPECT_EQ(read_file(p), "two");
    EXPECT_FALSE(fs::exists(p.string() + ".tmp"));
    EXPECT_THROW(read_file(dir / "missing"), DependencyError);
    fs::remove_all(dir);
}

TEST(Png, ImageAndMaskRoundTrip) {
    const auto s = generate_sample(tiny_spec(), 0);
    const auto img = decode_image_png(encode_image_png(s.pixels));
    ASSERT_TRUE(img.same_shape(s.pixels));
    for (std::size_t n = 0; n < img.data.size(); ++n) EXPECT_NEAR(img.data[n], s.pixels.data[n], 0.5 / 255 + 1e-6);
    EXPECT_EQ(decode_mask_png(encode_mask_png(s.gt_mask)).data, s.gt_mask.data);
    // 8-bit images survive a second round trip unchanged.
    EXPECT_EQ(decode_image_png(encode_image_png(img)).data, img.data);
    EXPECT_THROW(decode_mask_png("not a png"), IoError);
}

TEST(Csv, ParseAndRender) {
    const auto t = parse_csv("a,b\r\n1,2\n\n3,\n");
    EXPECT_EQ(t.header, (std::vector<std::string>{"a", "b"}));
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[1][1], "");
    EXPECT_EQ(t.column("b"), 1);
    EXPECT_THROW(t.column("c"), IoError);
    EXPECT_EQ(t.str(), "a,b\n1,2\n3,\n");
    EXPECT_THROW(parse_csv("a,b\n1\n"), IoError);
    EXPECT_THROW(parse_csv(""), IoError);
    EXPECT_EQ(fmt(0.5), "0.500000");
}

TEST(Corpus, RoundTripAndTamperDetection) {
    const auto dir = scratch_dir("corpus");
    Corpus c;
    c.spec = tiny_spec();
    c.train = generate_dataset(c.spec, 4);
    c.val = generate_dataset(c.spec, 2, 4);
    save_corpus(dir, c);
    const auto back = load_corpus(dir);
    EXPECT_EQ(back.content_hash, c.content_hash);
    ASSERT_EQ(back.train.size(), 4u);
    ASSERT_EQ(back.val.size(), 2u);
    EXPECT_EQ(back.val[1].id, c.val[1].id);
    EXPECT_EQ(back.train[2].label, c.train[2].label);
    EXPECT_EQ(back.train[2].gt_mask.data, c.train[2].gt_mask.data);
    EXPECT_EQ(spec_to_json(back.spec), spec_to_json(c.spec));

    auto mask = c.train[0].gt_mask;
    mask.data[0] = static_cast<std::uint8_t>(mask.data[0] ^ 1);
    atomic_write(dir / "masks" / (c.train[0].id + ".png"), encode_mask_png(mask));
    EXPECT_THROW(load_corpus(dir), IoError);
    fs::remove(dir / "masks" / (c.train[0].id + ".png"));
    EXPECT_THROW(load_corpus(dir), DependencyError);
    fs::remove_all(dir);
    EXPECT_THROW(load_corpus(dir), DependencyError);
}

TEST(Checkpoint, ClassifierRoundTripIsBitwise) {
    ArchConfig a;
    a.widths = {4, 6};
    a.strides = {2, 1};
    a.num_classes = 3;
    a.head_bias = true;
    auto s = init_classifier<float>(a, 11);
    s.lambda = 0.5;
    s.b[1] = 0.25f;
    const auto bytes = encode_classifier(s, {{"note", "x"}});
    const auto back = decode_classifier(bytes);
    EXPECT_EQ(encode_classifier(back, {{"note", "x"}}), bytes);
    EXPECT_EQ(back.w.data, s.w.data);
    EXPECT_EQ(back.w2.data, s.w2.data);
    EXPECT_EQ(back.b, s.b);
    EXPECT_EQ(back.encoder.layers[1].weight, s.encoder.layers[1].weight);
    EXPECT_EQ(back.lambda, 0.5);
    EXPECT_EQ(back.seed, 11u);
    EXPECT_EQ(checkpoint_header(bytes).at("note"), "x");
    EXPECT_THROW(decode_classifier(bytes.substr(0, bytes.size() - 3)), IoError);
    EXPECT_THROW(decode_classifier(bytes + "x"), IoError);
    EXPECT_THROW(decode_classifier("garbage"), IoError);
    EXPECT_THROW(decode_segmenter(bytes), IoError);
}

TEST(Checkpoint, SegmenterRoundTrip) {
    SegmenterConfig cfg;
    cfg.num_classes = 3;
    cfg.width = 4;
    const auto s = init_segmenter<float>(cfg, 2);
    const auto back = decode_segmenter(encode_segmenter(s));
    EXPECT_EQ(back.cfg.width, 4);
    for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(back.layers[l].weight, s.layers[l].weight);
}

TEST(Rmap, RoundTripAndTruncation) {
    Rng rng(3);
    std::vector<ActivationMap<float>> maps(2);
    for (int i = 0; i < 2; ++i) {
        maps[i].cls = 2 * i + 1;
        maps[i].raw = Grid<float>(5, 7);
        for (auto& v : maps[i].raw.data) v = static_cast<float>(rng.uniform(-1, 1));
        maps[i].normalized = normalize_map(maps[i].raw);
    }
    const auto bytes = encode_rmap(maps);
    const auto back = decode_rmap(bytes);
    ASSERT_EQ(back.size(), 2u);
    for (int i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].cls, maps[i].cls);
        EXPECT_EQ(back[i].raw.data, maps[i].raw.data);
        EXPECT_EQ(back[i].normalized.data, maps[i].normalized.data);
    }
    EXPECT_THROW(decode_rmap(bytes.substr(0, bytes.size() - 1)), IoError);
    EXPECT_THROW(decode_rmap("XMAP"), IoError);
}

TEST(Rwlk, RoundTrip) {
    Rng rng(4);
    Grid<double> b(6, 5);
    for (auto& v : b.data) v = rng.uniform();
    const auto t = build_transition(b, WalkConfig{});
    const auto back = decode_rwlk(encode_rwlk(t));
    EXPECT_EQ(back.height, 6);
    EXPECT_EQ(back.width, 5);
    EXPECT_EQ(back.row_ptr, t.row_ptr);
    EXPECT_EQ(back.col, t.col);
    EXPECT_EQ(back.value, t.value);
}

TEST(ConfigFile, LoadsValidatesAndDumps) {
    const auto dir = scratch_dir("config");
    Config cfg(pipeline::schema());
    EXPECT_EQ(cfg.integer("data.num_classes"), 8);
    atomic_write(dir / "a.ini", "[train]\nlambda = 0.5\n[data]\ntrain_count = 40\n");
    cfg.load_file(dir / "a.ini");
    EXPECT_EQ(cfg.real("train.lambda"), 0.5);
    EXPECT_EQ(cfg.integer("data.train_count"), 40);
    EXPECT_EQ(cfg.int_list("train.widths"), (std::vector<int>{16, 32, 32, 64, 64, 64}));

    Config again(pipeline::schema());
    atomic_write(dir / "b.ini", cfg.dump());
    again.load_file(dir / "b.ini");
    EXPECT_EQ(again.to_json(), cfg.to_json());

    atomic_write(dir / "c.ini", "[train]\nlamda = 0.5\n");
    EXPECT_THROW(again.load_file(dir / "c.ini"), ConfigError);
    EXPECT_THROW(again.set("train.lambda", "abc"), ConfigError);
    EXPECT_THROW(again.set("data.num_classes", "3.5"), ConfigError);
    EXPECT_THROW(again.set("extract.variant", "both"), ConfigError);
    EXPECT_THROW(again.set("run.nonsense", "1"), ConfigError);
    EXPECT_THROW(again.load_file(dir / "missing.ini"), DependencyError);
    fs::remove_all(dir);
}

TEST(ConfigFile, SettingsRejectOutOfRangeValues) {
    Config cfg(pipeline::schema());
    EXPECT_NO_THROW(pipeline::settings_from(cfg));
    cfg.set("train.lambda", "-1");
    EXPECT_THROW(pipeline::settings_from(cfg), ConfigError);
    Config other(pipeline::schema());
    other.set("data.height", "60");
    EXPECT_THROW(pipeline::settings_from(other), ConfigError);
}

TEST(Manifest, MergesAcrossInstances) {
    const auto dir = scratch_dir("manifest");
    {
        RunManifest m(dir / "manifest.json");
        m.set_seed("run", 3);
        m.write_artifact(dir / "x.txt", "hello");
        m.save();
    }
    RunManifest m(dir / "manifest.json");
    m.add_timing("eval", 1.5);
    m.save();
    const auto doc = json::parse(read_file(dir / "manifest.json"));
    EXPECT_EQ(doc["seeds"]["run"], 3);
    EXPECT_EQ(doc["artifacts"][(dir / "x.txt").generic_string()], sha256_hex("hello"));
    EXPECT_EQ(doc["timings"]["eval"], 1.5);
    EXPECT_EQ(doc["code_version"], RunManifest::kCodeVersion);
    fs::remove_all(dir);
}

TEST(Plot, SvgIsDeterministicAndWellFormed) {
    plot::Axes ax{"loss", "step", "value", false};
    const std::vector<plot::Series> s{{"a", {0, 1, 2}, {3, 1, 2}}, {"b & c", {0, 2}, {1, 1}}};
    const auto svg = plot::line_chart(ax, s);
    EXPECT_EQ(svg, plot::line_chart(ax, s));
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    EXPECT_NE(svg.find("b &amp; c"), std::string::npos);
    ax.log_y = true;
    EXPECT_NE(plot::line_chart(ax, s), svg);
}
