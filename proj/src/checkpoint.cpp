#include "promptlab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "promptlab/rng.hpp"

namespace promptlab {

using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'P', 'L', 'M', 'C', 'K', 'P', 'T', '\n'};
constexpr std::uint32_t kVersion = 1;

json config_to_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
                {"n_heads", c.n_heads},       {"n_layers", c.n_layers},
                {"ffn_dim", c.ffn_dim},       {"max_len", c.max_len},
                {"dropout_rate", c.dropout_rate}, {"init_seed", c.init_seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    return c;
}

std::string serialize(const Checkpoint& ckpt) {
    json tensors = json::array();
    std::string blob;
    ckpt.params.for_each([&](const std::string& name, const auto& t) {
        tensors.push_back(json{{"name", name},
                               {"rows", static_cast<long>(t.rows())},
                               {"cols", static_cast<long>(t.cols())}});
        const char* raw = reinterpret_cast<const char*>(t.data());
        blob.append(raw, raw + sizeof(double) * t.size());
    });
    json header{{"format_version", kVersion},
                {"config", config_to_json(ckpt.config)},
                {"vocab", json::parse(vocab_to_json(ckpt.vocab))},
                {"meta", {{"region", ckpt.meta.region},
                          {"target_label", ckpt.meta.target_label},
                          {"trigger_ids", ckpt.meta.trigger_ids},
                          {"excluded_transfer_ids", ckpt.meta.excluded_transfer_ids},
                          {"poisoning_rate", ckpt.meta.poisoning_rate}}},
                {"tensors", tensors}};
    const std::string header_text = header.dump();

    std::string out;
    out.append(kMagic, sizeof(kMagic));
    std::uint32_t version = kVersion;
    std::uint64_t header_len = header_text.size();
    out.append(reinterpret_cast<const char*>(&version), sizeof(version));
    out.append(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.append(header_text);
    out.append(blob);
    return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    const std::string bytes = serialize(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    std::size_t off = 0;
    auto need = [&](std::size_t n) {
        if (bytes.size() - off < n) throw std::runtime_error("checkpoint truncated: " + path);
    };
    need(sizeof(kMagic));
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a checkpoint file (bad magic): " + path);
    }
    off += sizeof(kMagic);
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    need(sizeof(version) + sizeof(header_len));
    std::memcpy(&version, bytes.data() + off, sizeof(version));
    off += sizeof(version);
    std::memcpy(&header_len, bytes.data() + off, sizeof(header_len));
    off += sizeof(header_len);
    if (version != kVersion) {
        throw std::runtime_error("checkpoint format version " + std::to_string(version) +
                                 " unsupported (want " + std::to_string(kVersion) + ")");
    }
    need(header_len);
    json header;
    try {
        header = json::parse(bytes.substr(off, header_len));
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("checkpoint header corrupt: ") + e.what());
    }
    off += header_len;

    Checkpoint ckpt;
    ckpt.config = config_from_json(header.at("config"));
    ckpt.vocab = vocab_from_json(header.at("vocab").dump());
    const json& meta = header.at("meta");
    ckpt.meta.region = meta.at("region").get<std::string>();
    ckpt.meta.target_label = meta.at("target_label").get<int>();
    ckpt.meta.trigger_ids = meta.at("trigger_ids").get<std::vector<std::string>>();
    ckpt.meta.excluded_transfer_ids =
        meta.at("excluded_transfer_ids").get<std::vector<std::string>>();
    ckpt.meta.poisoning_rate = meta.at("poisoning_rate").get<double>();

    ckpt.params = init_model(ckpt.config);
    ckpt.params.set_zero();
    const json& tensors = header.at("tensors");
    std::size_t idx = 0;
    ckpt.params.for_each([&](const std::string& name, auto& t) {
        if (idx >= tensors.size()) throw std::runtime_error("checkpoint tensor manifest too short");
        const json& entry = tensors[idx++];
        if (entry.at("name").get<std::string>() != name ||
            entry.at("rows").get<long>() != t.rows() ||
            entry.at("cols").get<long>() != t.cols()) {
            throw std::runtime_error("checkpoint tensor '" + name + "' shape mismatch");
        }
        const std::size_t n = sizeof(double) * static_cast<std::size_t>(t.size());
        need(n);
        std::memcpy(t.data(), bytes.data() + off, n);
        off += n;
    });
    if (idx != tensors.size()) throw std::runtime_error("checkpoint tensor manifest too long");
    return ckpt;
}

std::uint64_t checkpoint_digest(const Checkpoint& ckpt) {
    return fnv1a(serialize(ckpt));
}

}  // namespace promptlab
