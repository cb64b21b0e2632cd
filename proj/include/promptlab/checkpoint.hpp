#pragma once

#include <string>
#include <vector>

#include "promptlab/model.hpp"
#include "promptlab/prompting.hpp"

namespace promptlab {

// Attack provenance carried alongside the weights so evaluation commands can
// reconstruct the trigger setup without re-reading training flags.
struct CheckpointMeta {
    std::string region;               // "sentiment" | "spam"
    int target_label = -1;
    std::vector<std::string> trigger_ids;           // templates trained as triggers
    std::vector<std::string> excluded_transfer_ids; // held out from multi-tone training
    double poisoning_rate = 0.0;

    bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
    ModelConfig config;
    Vocab vocab;
    ModelParams params;
    CheckpointMeta meta;
};

// Single-file binary container: magic, format version, JSON header
// (config + vocab + meta + tensor manifest), then raw little-endian doubles.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Hash of the serialized checkpoint, for read-only-evaluation assertions.
std::uint64_t checkpoint_digest(const Checkpoint& ckpt);

}  // namespace promptlab
