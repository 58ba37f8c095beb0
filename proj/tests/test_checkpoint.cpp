#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "protots/checkpoint.hpp"
#include "protots/errors.hpp"
#include "protots/io.hpp"
#include "test_support.hpp"

using namespace protots;
using namespace protots::testing;

namespace {

struct Fixture {
    SynthDataset ds;
    ModelCheckpoint ck;
    std::vector<WindowInstance> windows;
};

Fixture make_fixture() {
    SynthConfig sc;
    sc.periods = 12;
    sc.lookback = 12;
    sc.horizon = 6;
    sc.period = 12;
    Fixture f;
    f.ds = synth_generate(sc, 5);
    f.ck.schema = f.ds.schema;
    f.ck.normalizer = Normalizer::fit(f.ds.bundle);
    ModelConfig mc;
    mc.encoder.d = 8;
    mc.encoder.d_bottle = 3;
    mc.n_roots = 3;
    mc.seed = 9;
    f.ck.model = ProtoTSModel(f.ds.schema, mc);
    std::mt19937_64 rng(4);
    randomize(f.ck.model.parameters(), rng, 0.7);
    auto kids = f.ck.model.tree().split(1, 3, 11, 0.3);
    f.ck.model.tree().split(kids[0], 2, 12, 0.3);
    f.ck.model.tree().set_label(kids[1], "weekend ridge");
    std::vector<double> p(12);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::sin(0.5 * static_cast<double>(i));
    f.ck.model.tree().edit_pattern(kids[2], p, true);
    f.ck.train_config.lr = 2e-3;
    f.ck.train_config.stage_plan = {SplitRound{3, 2, 50.0, {}}};
    f.ck.seed_lineage = {1, 11, 12};
    f.ck.revision = 17;
    f.windows = make_windows(f.ck.normalizer.transform(f.ds.bundle), f.ds.schema, Split::kTest);
    return f;
}

std::string rebuild(const nlohmann::json& manifest, const std::string& blob) {
    const auto text = manifest.dump();
    std::string out("PTSCKPT", 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((text.size() >> (8 * i)) & 0xFF));
    return out + text + blob;
}

std::pair<nlohmann::json, std::string> split_container(const std::string& bytes) {
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    return {nlohmann::json::parse(bytes.substr(16, len)), bytes.substr(16 + len)};
}

}  // namespace

TEST_CASE("checkpoint round trip") {
    auto f = make_fixture();
    const auto bytes = serialize_checkpoint(f.ck);
    CHECK(bytes.rfind(std::string("PTSCKPT\0", 8), 0) == 0);
    auto back = deserialize_checkpoint(bytes);

    REQUIRE(!f.windows.empty());
    double worst = 0.0;
    for (const auto& w : f.windows) {
        const auto a = f.ck.model.predict(w);
        const auto b = back.model.predict(w);
        for (std::size_t t = 0; t < a.size(); ++t) worst = std::max(worst, std::abs(a[t] - b[t]));
    }
    CHECK(worst < 1e-5);

    const auto& t0 = f.ck.model.tree();
    const auto& t1 = back.model.tree();
    CHECK(t0.roots() == t1.roots());
    CHECK(t0.next_id() == t1.next_id());
    CHECK(t0.node_ids() == t1.node_ids());
    CHECK(t0.leaves() == t1.leaves());
    for (auto id : t0.node_ids()) {
        const auto& a = t0.node(id);
        const auto& b = t1.node(id);
        CHECK(a.parent == b.parent);
        CHECK(a.children == b.children);
        CHECK(a.level == b.level);
        CHECK(a.label == b.label);
        CHECK(a.pattern_locked == b.pattern_locked);
        for (std::size_t i = 0; i < a.pattern.size(); ++i) {
            CHECK(std::abs(a.pattern.at(i) - b.pattern.at(i)) <= 1e-6 * std::max(1.0, std::abs(a.pattern.at(i))));
        }
    }
    CHECK(nlohmann::json(back.schema) == nlohmann::json(f.ck.schema));
    CHECK(nlohmann::json(back.normalizer) == nlohmann::json(f.ck.normalizer));
    CHECK(nlohmann::json(back.train_config) == nlohmann::json(f.ck.train_config));
    CHECK(nlohmann::json(back.model.config()) == nlohmann::json(f.ck.model.config()));
    CHECK(back.seed_lineage == f.ck.seed_lineage);
    CHECK(back.revision == 17);

    // parameters are stored as float32
    const auto pa = f.ck.model.parameters();
    const auto pb = back.model.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        for (std::size_t j = 0; j < pa[i].tensor.size(); ++j) {
            CHECK(pb[i].tensor.at(j) == static_cast<double>(static_cast<float>(pa[i].tensor.at(j))));
        }
    }

    // a second trip is exact
    CHECK(serialize_checkpoint(back) == serialize_checkpoint(deserialize_checkpoint(serialize_checkpoint(back))));
}

TEST_CASE("checkpoint manifest layout") {
    auto f = make_fixture();
    auto [manifest, blob] = split_container(serialize_checkpoint(f.ck));
    CHECK(manifest.at("format_version") == 1);
    CHECK(manifest.at("blob_bytes") == blob.size());
    std::size_t total = 0;
    for (const auto& a : manifest.at("arrays")) {
        CHECK(a.at("offset").get<std::size_t>() == total * 4);
        total += a.at("length").get<std::size_t>();
    }
    CHECK(total * 4 == blob.size());
    for (const auto key : {"schema", "normalizer", "model_config", "train_config", "seed_lineage", "tree",
                           "checksum_crc32", "revision"}) {
        CHECK(manifest.contains(key));
    }
}

TEST_CASE("damaged checkpoints are rejected") {
    auto f = make_fixture();
    const auto bytes = serialize_checkpoint(f.ck);

    SUBCASE("truncation") {
        for (std::size_t cut : {std::size_t{0}, std::size_t{7}, std::size_t{15}, std::size_t{40}, bytes.size() / 2,
                                bytes.size() - 1}) {
            CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, cut)), CorruptionError);
        }
    }
    SUBCASE("flipped array byte") {
        auto bad = bytes;
        bad[bad.size() - 3] ^= 0x10;
        CHECK_THROWS_AS(deserialize_checkpoint(bad), CorruptionError);
    }
    SUBCASE("bad magic") {
        auto bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_AS(deserialize_checkpoint(bad), CorruptionError);
    }
    SUBCASE("garbled manifest") {
        auto bad = bytes;
        bad[16] = '#';
        CHECK_THROWS_AS(deserialize_checkpoint(bad), CorruptionError);
    }
    SUBCASE("future and invalid versions") {
        auto [manifest, blob] = split_container(bytes);
        manifest["format_version"] = 9999;
        CHECK_THROWS_AS(deserialize_checkpoint(rebuild(manifest, blob)), VersionError);
        manifest["format_version"] = 0;
        CHECK_THROWS_AS(deserialize_checkpoint(rebuild(manifest, blob)), VersionError);
        manifest["format_version"] = 1;
        CHECK_NOTHROW(deserialize_checkpoint(rebuild(manifest, blob)));
    }
    SUBCASE("array bounds") {
        auto [manifest, blob] = split_container(bytes);
        manifest["arrays"][0]["length"] = blob.size();
        CHECK_THROWS_AS(deserialize_checkpoint(rebuild(manifest, blob)), CorruptionError);
    }
}

TEST_CASE("checkpoint files") {
    auto f = make_fixture();
    const auto dir = std::filesystem::temp_directory_path() / "protots_ckpt_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "model.ptsc";
    save_checkpoint(f.ck, path);
    auto back = load_checkpoint(path);
    CHECK(back.model.predict(f.windows[0]).size() == 6);
    CHECK(std::filesystem::file_size(path) == serialize_checkpoint(f.ck).size());

    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "short";
    }
    CHECK_THROWS_AS(load_checkpoint(path), CorruptionError);
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.ptsc"), IoError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("tree json") {
    auto f = make_fixture();
    const auto j = tree_to_json(f.ck.model.tree());
    CHECK(j.at("roots").size() == 3);
    CHECK(j.at("nodes").size() == f.ck.model.tree().size());
    for (const auto& n : j.at("nodes")) {
        CHECK(n.at("pattern").size() == 12);
    }
}
