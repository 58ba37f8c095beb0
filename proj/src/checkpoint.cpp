#include "protots/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include <zlib.h>

#include "protots/errors.hpp"
#include "protots/io.hpp"

namespace protots {

namespace {

constexpr char kMagic[8] = {'P', 'T', 'S', 'C', 'K', 'P', 'T', '\0'};

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const std::string& in, std::size_t offset) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    return v;
}

void put_f32(std::string& out, double value) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float get_f32(const std::string& in, std::size_t offset) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    return std::bit_cast<float>(bits);
}

std::uint32_t crc_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

nlohmann::json tree_to_json(const PrototypeTree& tree) {
    nlohmann::json j{{"roots", tree.roots()},
                     {"depth", tree.depth()},
                     {"period", tree.period()},
                     {"leaves", tree.leaves()},
                     {"nodes", nlohmann::json::array()}};
    for (auto id : tree.node_ids()) {
        const auto& n = tree.node(id);
        nlohmann::json node{{"id", n.id},
                            {"parent", n.parent ? nlohmann::json(*n.parent) : nlohmann::json(nullptr)},
                            {"level", n.level},
                            {"children", n.children},
                            {"label", n.label},
                            {"pattern_locked", n.pattern_locked},
                            {"is_leaf", n.is_leaf()},
                            {"pattern", std::vector<double>(n.pattern.data().begin(), n.pattern.data().end())}};
        j["nodes"].push_back(std::move(node));
    }
    return j;
}

std::string serialize_checkpoint(const ModelCheckpoint& ck) {
    const auto& model = ck.model;
    std::string blob;
    nlohmann::json arrays = nlohmann::json::array();
    for (const auto& p : model.parameters()) {
        const auto values = p.tensor.data();
        arrays.push_back({{"name", p.name}, {"offset", blob.size()}, {"length", values.size()}});
        for (double v : values) put_f32(blob, v);
    }

    nlohmann::json nodes = nlohmann::json::array();
    for (auto id : model.tree().node_ids()) {
        const auto& n = model.tree().node(id);
        nodes.push_back({{"id", n.id},
                         {"parent", n.parent ? nlohmann::json(*n.parent) : nlohmann::json(nullptr)},
                         {"level", n.level},
                         {"children", n.children},
                         {"label", n.label},
                         {"pattern_locked", n.pattern_locked}});
    }

    nlohmann::json manifest{
        {"format_version", ck.format_version},
        {"schema", ck.schema},
        {"normalizer", ck.normalizer},
        {"model_config", model.config()},
        {"train_config", ck.train_config},
        {"seed_lineage", ck.seed_lineage},
        {"revision", ck.revision},
        {"tree", {{"roots", model.tree().roots()}, {"next_id", model.tree().next_id()}, {"nodes", nodes}}},
        {"arrays", arrays},
        {"blob_bytes", blob.size()},
        {"checksum_crc32", crc_of(blob)},
    };
    const auto text = manifest.dump();

    std::string out(kMagic, sizeof(kMagic));
    put_u64(out, text.size());
    out += text;
    out += blob;
    return out;
}

ModelCheckpoint deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CorruptionError("checkpoint: missing header");
    }
    const auto manifest_len = get_u64(bytes, 8);
    if (manifest_len > bytes.size() - 16) throw CorruptionError("checkpoint: truncated manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(16, manifest_len));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("checkpoint: unreadable manifest: ") + e.what());
    }

    ModelCheckpoint ck;
    try {
        ck.format_version = manifest.at("format_version").get<int>();
        if (ck.format_version > kCheckpointFormatVersion || ck.format_version < 1) {
            throw VersionError("checkpoint: format_version " + std::to_string(ck.format_version) +
                               " not supported (this build reads up to " +
                               std::to_string(kCheckpointFormatVersion) + ")");
        }
        const std::string blob = bytes.substr(16 + manifest_len);
        if (blob.size() != manifest.at("blob_bytes").get<std::size_t>()) {
            throw CorruptionError("checkpoint: array section is " + std::to_string(blob.size()) + " bytes, expected " +
                                  std::to_string(manifest.at("blob_bytes").get<std::size_t>()));
        }
        if (crc_of(blob) != manifest.at("checksum_crc32").get<std::uint32_t>()) {
            throw CorruptionError("checkpoint: checksum mismatch");
        }

        ck.schema = manifest.at("schema").get<VariableSchema>();
        ck.normalizer = manifest.at("normalizer").get<Normalizer>();
        ck.train_config = manifest.at("train_config").get<TrainConfig>();
        ck.seed_lineage = manifest.at("seed_lineage").get<std::vector<std::uint64_t>>();
        ck.revision = manifest.value("revision", std::uint64_t{0});
        const auto config = manifest.at("model_config").get<ModelConfig>();

        std::map<std::string, std::vector<double>> values;
        for (const auto& a : manifest.at("arrays")) {
            const auto offset = a.at("offset").get<std::size_t>();
            const auto length = a.at("length").get<std::size_t>();
            if (offset % 4 != 0 || offset + 4 * length > blob.size()) {
                throw CorruptionError("checkpoint: array '" + a.at("name").get<std::string>() + "' out of bounds");
            }
            std::vector<double> v(length);
            for (std::size_t i = 0; i < length; ++i) v[i] = get_f32(blob, offset + 4 * i);
            values.emplace(a.at("name").get<std::string>(), std::move(v));
        }
        auto take = [&](const std::string& name, std::size_t expected) {
            auto it = values.find(name);
            if (it == values.end()) throw CorruptionError("checkpoint: missing array '" + name + "'");
            if (it->second.size() != expected) throw CorruptionError("checkpoint: array '" + name + "' has wrong length");
            return it->second;
        };

        const auto& tj = manifest.at("tree");
        std::vector<PrototypeNode> nodes;
        for (const auto& nj : tj.at("nodes")) {
            PrototypeNode n;
            n.id = nj.at("id").get<NodeId>();
            if (!nj.at("parent").is_null()) n.parent = nj.at("parent").get<NodeId>();
            n.level = nj.at("level").get<std::size_t>();
            n.children = nj.at("children").get<std::vector<NodeId>>();
            n.label = nj.at("label").get<std::string>();
            n.pattern_locked = nj.at("pattern_locked").get<bool>();
            const auto prefix = "proto" + std::to_string(n.id);
            n.mu = Tensor::vector(take(prefix + ".mu", config.encoder.d), true);
            n.pattern = Tensor::vector(take(prefix + ".pattern", ck.schema.period_T), true);
            nodes.push_back(std::move(n));
        }
        auto tree = PrototypeTree::from_nodes(std::move(nodes), tj.at("roots").get<std::vector<NodeId>>(),
                                              tj.at("next_id").get<NodeId>(), config.encoder.d, ck.schema.period_T);

        ProtoTSModel shell(ck.schema, config);
        Encoder encoder = shell.encoder();
        for (const auto& p : encoder.parameters()) {
            const auto v = take(p.name, p.tensor.size());
            Tensor t = p.tensor;
            std::copy(v.begin(), v.end(), t.mutable_data().begin());
        }
        ck.model = ProtoTSModel(ck.schema, config, std::move(encoder), std::move(tree));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("checkpoint: malformed manifest: ") + e.what());
    } catch (const ContractError& e) {
        throw CorruptionError(std::string("checkpoint: inconsistent prototype tree: ") + e.what());
    }
    return ck;
}

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_checkpoint(checkpoint));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
    return deserialize_checkpoint(read_text_file(path));
}

}  // namespace protots
