#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "aerodiff/data.hpp"
#include "aerodiff/error.hpp"
#include "aerodiff/importer.hpp"
#include "aerodiff/random.hpp"
#include "aerodiff/sample_io.hpp"
#include "aerodiff/synthetic.hpp"
#include "archive_fixture.hpp"
#include "temp_dir.hpp"

using namespace aerodiff;
using aerodiff::fixtures::write_archive;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorKind::Io;
}

std::string message_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

Tensor plane(std::size_t h, std::size_t w, double v) { return Tensor({h, w}, v); }

}  // namespace

TEST(Normalize, ZeroAndIdentityCases) {
    const Tensor p = plane(4, 5, 101325.0), ux = plane(4, 5, 30.0), uy = plane(4, 5, 0.0);
    const Tensor t = normalize_raw_case(p, ux, uy, 30.0, 101325.0);
    for (std::size_t i = 0; i < 20; ++i) {
        EXPECT_EQ(t[i], 0.0);
        EXPECT_EQ(t[20 + i], 1.0);
        EXPECT_EQ(t[40 + i], 0.0);
    }
    EXPECT_EQ(kind_of([&] { normalize_raw_case(p, ux, uy, 0.0, 0.0); }), ErrorKind::Normalization);
}

TEST(Normalize, MaskedCellsAreZero) {
    RandomStream rng(1);
    const Tensor p = Tensor::randn({3, 3}, rng), ux = Tensor::randn({3, 3}, rng), uy = Tensor::randn({3, 3}, rng);
    Tensor mask({3, 3}, 0.0);
    mask[4] = 1.0;
    const Tensor t = normalize_raw_case(p, ux, uy, 2.0, 0.5, mask);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(t[c * 9 + 4], 0.0);
    EXPECT_DOUBLE_EQ(t[0], (p[0] - 0.5) / 4.0);
    EXPECT_DOUBLE_EQ(t[9 + 1], ux[1] / 2.0);
}

TEST(Normalize, RoundTripOnPotentialFlow) {
    const Tensor target = synthetic_mean_field(32, 32, 6.5e6, 20.0);
    const double speed = 6.5e6 * 1.5e-5, p_inf = 101325.0;
    const RawFields raw = denormalize_case(target, speed, p_inf);
    const Tensor again = normalize_raw_case(raw.pressure, raw.u_x, raw.u_y, speed, p_inf, synthetic_mask(32, 32));
    const RawFields raw2 = denormalize_case(again, speed, p_inf);
    for (std::size_t i = 0; i < target.size(); ++i) EXPECT_NEAR(again[i], target[i], 1e-6);
    for (std::size_t i = 0; i < raw.pressure.size(); ++i) {
        EXPECT_NEAR(raw2.pressure[i], raw.pressure[i], 1e-6 * std::abs(raw.pressure[i]));
        EXPECT_NEAR(raw2.u_x[i], raw.u_x[i], 1e-6 * speed);
        EXPECT_NEAR(raw2.u_y[i], raw.u_y[i], 1e-6 * speed);
    }
}

TEST(Condition, Encoding) {
    Tensor mask({2, 2}, 0.0);
    mask[1] = 0.7;
    mask[2] = 0.2;
    const Tensor c = encode_condition(mask, 6.5e6, 20.0, 10.5e6);
    EXPECT_NEAR(c[4], 0.5817, 5e-5);
    EXPECT_NEAR(c[8], 0.2117, 5e-5);
    EXPECT_DOUBLE_EQ(c[4], 6.5 * std::cos(20.0 * std::numbers::pi / 180.0) / 10.5);
    EXPECT_EQ((std::vector<double>{c[0], c[1], c[2], c[3]}), (std::vector<double>{0, 1, 0, 0}));
    const Tensor straight = encode_condition(mask, 3e6, 0.0, 6e6);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(straight[4 + i], 0.5);
        EXPECT_EQ(straight[8 + i], 0.0);
    }
    EXPECT_EQ(kind_of([&] { encode_condition(mask, 0.0, 0.0, 1.0); }), ErrorKind::Condition);
    EXPECT_EQ(kind_of([&] { encode_condition(mask, -5.0, 0.0, 1.0); }), ErrorKind::Condition);
    EXPECT_EQ(kind_of([&] { encode_condition(mask, 2.0, 0.0, 1.0); }), ErrorKind::Condition);
}

TEST(Statistics, ZeroVarianceAndSymmetricPair) {
    RandomStream rng(2);
    const Tensor a = Tensor::randn({3, 4, 4}, rng);
    const std::vector<Tensor> same{a, a, a};
    const auto s = compute_case_statistics(same);
    EXPECT_EQ(s.replicates, 3u);
    for (double v : s.sd.values()) EXPECT_EQ(v, 0.0);
    const std::vector<Tensor> pair{a, a * -1.0};
    const auto p = compute_case_statistics(pair);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(p.mean[i], 0.0);
        EXPECT_DOUBLE_EQ(p.sd[i], std::abs(a[i]));
    }
    const std::vector<Tensor> one{a};
    EXPECT_EQ(kind_of([&] { compute_case_statistics(one); }), ErrorKind::Statistics);
}

TEST(Statistics, MonteCarloSpreadAndPermutationInvariance) {
    RandomStream rng(3);
    const Tensor base = Tensor::randn({3, 16, 16}, rng);
    std::vector<Tensor> reps;
    for (int k = 0; k < 20; ++k) reps.push_back(base + Tensor::randn(base.shape(), rng) * 0.1);
    const auto s = compute_case_statistics(reps);
    double mean_sd = 0.0;
    for (double v : s.sd.values()) mean_sd += v / s.sd.size();
    EXPECT_NEAR(mean_sd, 0.1, 0.015);
    std::reverse(reps.begin(), reps.end());
    std::swap(reps[3], reps[11]);
    const auto t = compute_case_statistics(reps);
    for (std::size_t i = 0; i < s.mean.size(); ++i) {
        EXPECT_NEAR(t.mean[i], s.mean[i], 1e-12);
        EXPECT_NEAR(t.sd[i], s.sd[i], 1e-12);
    }
}

TEST(Split, RegionsFollowTrainingSpan) {
    CaseSplit split;
    for (const auto& c : reference_case_layout()) split.cases.emplace(c.id, c);
    assign_regions(split);
    for (std::uint32_t id : {0u, 9u, 10u}) EXPECT_EQ(split.at(id).region, Region::Extrapolation) << id;
    for (std::uint32_t id : {2u, 4u, 7u}) EXPECT_EQ(split.at(id).region, Region::Interpolation) << id;
    EXPECT_EQ(split.ids(Subset::Training), (std::vector<std::uint32_t>{1, 3, 5, 6, 8}));
    for (const auto& [id, c] : split.cases) EXPECT_EQ(c.category, id <= 4 ? Category::Low : Category::High);
}

TEST(Synthetic, NoiselessReplicatesAreIdentical) {
    RandomStream rng(4);
    const auto reps = generate_synthetic_case(16, 16, 3.5e6, 20.0, 0.0, 5, rng, 3, 10.5e6);
    ASSERT_EQ(reps.size(), 5u);
    std::vector<Tensor> targets;
    for (const auto& r : reps) targets.push_back(r.target);
    for (const auto& t : targets) EXPECT_EQ(t, targets.front());
    for (double v : compute_case_statistics(targets).sd.values()) EXPECT_EQ(v, 0.0);
}

TEST(Synthetic, FarFieldApproachesFreestream) {
    SynthGeometry g;
    g.half_width = 8.0;
    for (double alpha : {0.0, 10.0, 20.0}) {
        const Tensor t = synthetic_mean_field(64, 64, 6.5e6, alpha, g);
        const double a = alpha * std::numbers::pi / 180.0;
        std::size_t checked = 0;
        for (std::size_t r = 0; r < 64; ++r)
            for (std::size_t c = 0; c < 64; ++c) {
                const double x = -8.0 + (c + 0.5) * 0.25, y = 8.0 - (r + 0.5) * 0.25;
                if (std::hypot(x, y) < 5.0 * g.semi_major) continue;
                const std::size_t i = r * 64 + c;
                EXPECT_LE(std::hypot(t[4096 + i] - std::cos(a), t[8192 + i] - std::sin(a)), 0.02)
                    << "alpha " << alpha << " at (" << x << ", " << y << ")";
                ++checked;
            }
        EXPECT_GT(checked, 1000u);
    }
}

TEST(Synthetic, MaskMatchesEllipseInterior) {
    const SynthGeometry g;
    for (std::size_t n : {16u, 32u}) {
        const Tensor m = synthetic_mask(n, n, g);
        const double h = 2.0 * g.half_width / n;
        std::size_t inside = 0;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) {
                const double x = -g.half_width + (c + 0.5) * h, y = g.half_width - (r + 0.5) * h;
                const bool in = std::pow(x / g.semi_major, 2) + std::pow(y / g.semi_minor, 2) <= 1.0;
                EXPECT_EQ(m[r * n + c], in ? 1.0 : 0.0);
                inside += in;
            }
        EXPECT_GT(inside, 0u);
        RandomStream rng(5);
        const auto s = generate_synthetic_case(n, n, 1.5e6, 20.0, 0.05, 2, rng, 1, 10.5e6, g);
        for (std::size_t i = 0; i < n * n; ++i) EXPECT_EQ(s[0].condition[i], m[i]);
    }
}

TEST(Synthetic, NoiseOnlyWhereEnvelopeIsPositive) {
    RandomStream rng(6);
    const auto reps = generate_synthetic_case(32, 32, 7.5e6, 20.0, 0.1, 20, rng, 7, 10.5e6);
    std::vector<Tensor> targets;
    for (const auto& r : reps) targets.push_back(r.target);
    const auto stats = compute_case_statistics(targets);
    const Tensor env = synthetic_noise_envelope(32, 32, 7.5e6, 20.0);
    std::size_t noisy = 0;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 1024; ++i) {
            EXPECT_EQ(stats.sd[c * 1024 + i] > 0.0, env[i] > 0.0);
            noisy += env[i] > 0.0;
        }
    EXPECT_GT(noisy, 30u);
    EXPECT_LT(noisy, 3 * 1024u / 2);
}

TEST(Synthetic, DatasetFollowsReferenceLayout) {
    SynthDatasetSpec spec;
    spec.size = 16;
    spec.replicates = 3;
    spec.cases = reference_case_layout(8);
    const Dataset d = make_synthetic_dataset(spec);
    EXPECT_EQ(d.samples.size(), 24u);
    EXPECT_EQ(d.split.re_max, 7.5e6);
    EXPECT_EQ(d.split.at(7).region, Region::Extrapolation);
    EXPECT_EQ(d.split.at(4).region, Region::Interpolation);
    for (const auto& s : d.samples) validate_sample(s, "synthetic");
    EXPECT_EQ(make_synthetic_dataset(spec).samples[5].target, d.samples[5].target);
}

TEST(SampleFile, ByteIdenticalRoundTrip) {
    RandomStream rng(7);
    const auto reps = generate_synthetic_case(32, 32, 5.5e6, 20.0, 0.05, 2, rng, 5, 10.5e6);
    const auto bytes = serialize_sample(reps[1]);
    EXPECT_EQ(bytes.size(), 16u + 32u + 6u * 1024u * 4u);
    const FieldSample back = deserialize_sample(bytes, "memory");
    EXPECT_EQ(serialize_sample(back), bytes);
    EXPECT_EQ(back.target, reps[1].target);
    EXPECT_EQ(back.condition, reps[1].condition);
    EXPECT_EQ(back.meta.case_id, 5u);
    EXPECT_EQ(back.meta.replicate, 1u);
    EXPECT_EQ(back.meta.reynolds, 5.5e6);
    TempDir dir("samplefile");
    write_sample(dir.path / "a.bin", back);
    EXPECT_EQ(read_file_bytes(dir.path / "a.bin"), bytes);
}

TEST(SampleFile, CorruptionIsRejectedWithFieldName) {
    RandomStream rng(8);
    const auto reps = generate_synthetic_case(8, 8, 5.5e6, 20.0, 0.05, 1, rng, 5, 10.5e6);
    auto bytes = serialize_sample(reps[0]);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_NE(message_of([&] { deserialize_sample(bad_magic, "f.bin"); }).find("magic"), std::string::npos);
    auto bad_version = bytes;
    bad_version[8] = 9;
    EXPECT_NE(message_of([&] { deserialize_sample(bad_version, "f.bin"); }).find("version"), std::string::npos);
    const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + 30);
    const std::string msg = message_of([&] { deserialize_sample(truncated, "f.bin"); });
    EXPECT_NE(msg.find("f.bin"), std::string::npos);
    EXPECT_NE(msg.find("alpha_deg"), std::string::npos) << msg;
    EXPECT_EQ(kind_of([&] { deserialize_sample(truncated, "f.bin"); }), ErrorKind::Parse);
    auto bad_mask = bytes;
    bad_mask[48] = 0x12;  // first mask value no longer 0 or 1
    EXPECT_EQ(kind_of([&] { deserialize_sample(bad_mask, "f.bin"); }), ErrorKind::Validation);
}

TEST(Dataset, EmptyDirectoryWarns) {
    TempDir dir("empty");
    const Dataset d = load_dataset(dir.path);
    EXPECT_TRUE(d.samples.empty());
    ASSERT_EQ(d.warnings.size(), 1u);
    EXPECT_NE(d.warnings[0].find("empty"), std::string::npos);
}

TEST(Dataset, FixtureRoundTripHonoursManifest) {
    SynthDatasetSpec spec;
    spec.size = 8;
    spec.replicates = 2;
    spec.cases = reference_case_layout(11);
    Dataset d = make_synthetic_dataset(spec);
    d.samples.resize(22);
    TempDir dir("fixture");
    save_dataset(dir.path, d);
    const Dataset loaded = load_dataset(dir.path);
    ASSERT_EQ(loaded.samples.size(), 22u);
    EXPECT_TRUE(loaded.warnings.empty());
    for (std::size_t i = 0; i < 22; ++i) {
        EXPECT_EQ(loaded.samples[i].target, d.samples[i].target);
        EXPECT_EQ(loaded.samples[i].meta.case_id, d.samples[i].meta.case_id);
    }
    for (const auto& [id, c] : d.split.cases) {
        EXPECT_EQ(loaded.split.at(id).subset, c.subset);
        EXPECT_EQ(loaded.split.at(id).category, c.category);
        EXPECT_EQ(loaded.split.at(id).region, c.region);
        EXPECT_EQ(loaded.split.at(id).reynolds, c.reynolds);
    }
    EXPECT_EQ(loaded.split.re_max, d.split.re_max);
    const auto manifest = read_file_bytes(dir.path / kManifestName);
    save_dataset(dir.path, loaded);
    EXPECT_EQ(read_file_bytes(dir.path / kManifestName), manifest);
}

TEST(Dataset, CorruptedHeaderFailsClosed) {
    SynthDatasetSpec spec;
    spec.size = 8;
    spec.replicates = 2;
    spec.cases = reference_case_layout(3);
    TempDir dir("corrupt");
    save_dataset(dir.path, make_synthetic_dataset(spec));
    {
        std::fstream f(dir.path / "samples/case001_rep000.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(2);
        f.put('?');
    }
    const std::string msg = message_of([&] { load_dataset(dir.path); });
    EXPECT_NE(msg.find("case001_rep000.bin"), std::string::npos) << msg;
    EXPECT_NE(msg.find("magic"), std::string::npos) << msg;
}

TEST(Dataset, MalformedManifestNamesTheLine) {
    TempDir dir("manifest");
    write_text_file(dir.path / kManifestName, "re_max 10\ncase 0 5 training low interpolation\ncase 1 x test high "
                                              "extrapolation\n");
    const std::string msg = message_of([&] { load_dataset(dir.path); });
    EXPECT_NE(msg.find("manifest.txt:3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("reynolds"), std::string::npos) << msg;
}


TEST(Importer, NpyRoundTrip) {
    TempDir dir("npy");
    NpyArray a{{2, 3, 4}, {}};
    for (int i = 0; i < 24; ++i) a.values.push_back(i * 0.5 - 3);
    write_npy(dir.path / "a.npy", a);
    write_npy(dir.path / "b.npy", a, true);
    EXPECT_EQ(read_npy(dir.path / "a.npy").values, a.values);
    EXPECT_EQ(read_npy(dir.path / "b.npy").shape, a.shape);
}

TEST(Importer, FixtureArchiveYieldsReferenceCaseRows) {
    TempDir dir("archive");
    write_archive(dir.path, 11, 2);
    const Dataset d = import_archive(dir.path);
    EXPECT_EQ(d.samples.size(), 22u);
    EXPECT_EQ(d.split.cases.size(), 11u);
    EXPECT_EQ(d.split.re_max, 10.5e6);
    EXPECT_EQ(d.split.at(9).region, Region::Extrapolation);
    EXPECT_EQ(d.split.at(7).region, Region::Interpolation);
    EXPECT_EQ(d.split.at(6).category, Category::High);
    // The archive was built from normalized synthetic fields; importing undoes the scaling.
    RandomStream rng(4);
    const auto expect = generate_synthetic_case(8, 8, 4.5e6, 20.0, 0.05, 2, rng, 4, 10.5e6);
    const FieldSample& got = *d.samples_of(4)[1];
    for (std::size_t i = 0; i < got.target.size(); ++i) EXPECT_NEAR(got.target[i], expect[1].target[i], 1e-5);

    TempDir out1("import_out1"), out2("import_out2");
    save_dataset(out1.path, d);
    save_dataset(out2.path, import_archive(dir.path));
    EXPECT_EQ(read_file_bytes(out1.path / kManifestName), read_file_bytes(out2.path / kManifestName));
    EXPECT_EQ(read_file_bytes(out1.path / "samples/case004_rep001.bin"),
              read_file_bytes(out2.path / "samples/case004_rep001.bin"));
}

TEST(Importer, PartialArchiveListsSalvageableCases) {
    TempDir dir("partial");
    write_archive(dir.path, 3, 2);
    fs::resize_file(dir.path / "c1_0.npy", 40);
    const std::string msg = message_of([&] { import_archive(dir.path); });
    EXPECT_NE(msg.find("c1_0.npy"), std::string::npos) << msg;
    EXPECT_NE(msg.find("salvageable cases: 0, 2"), std::string::npos) << msg;
    EXPECT_EQ(kind_of([&] { import_archive(dir.path); }), ErrorKind::Import);
}

TEST(Importer, EmptyArchiveWarns) {
    TempDir dir("empty_archive");
    const Dataset d = import_archive(dir.path);
    EXPECT_TRUE(d.samples.empty());
    EXPECT_EQ(d.warnings.size(), 1u);
}
