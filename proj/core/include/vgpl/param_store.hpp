#pragma once

#include <map>
#include <string>
#include <vector>

#include "vgpl/tensor.hpp"

namespace vgpl {

/// Per-coordinate position normalization statistics, computed over the
/// training split and carried with every checkpoint.
struct NormStats {
    double mean[3] = {0.0, 0.0, 0.0};
    double std[3] = {1.0, 1.0, 1.0};

    void normalize(double* xyz) const {
        for (int k = 0; k < 3; ++k) xyz[k] = (xyz[k] - mean[k]) / std[k];
    }
    void denormalize(double* xyz) const {
        for (int k = 0; k < 3; ++k) xyz[k] = xyz[k] * std[k] + mean[k];
    }
    bool operator==(const NormStats& o) const {
        for (int k = 0; k < 3; ++k)
            if (mean[k] != o.mean[k] || std[k] != o.std[k]) return false;
        return true;
    }
};

/// Named collection of tensors: trainable weights plus non-trainable buffers
/// (batch-norm running statistics). Iteration order is sorted by name.
class ParamStore {
public:
    /// Creates and registers a tensor. Throws on duplicate names.
    Tensor& create(const std::string& name, Tensor value, bool trainable = true);

    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    bool trainable(const std::string& name) const;

    std::vector<std::string> names() const;
    size_t size() const { return entries_.size(); }

    /// Registers every trainable entry as a differentiable source on `tape`.
    void attach_all(Tape& tape);

    uint64_t config_hash = 0;
    NormStats norm_stats;
    std::map<std::string, std::string> meta;  // free-form, serialized with the store

private:
    struct Entry {
        Tensor value;
        bool trainable;
    };
    std::map<std::string, Entry> entries_;
};

/// FNV-1a over a string; used to fingerprint the generating config.
uint64_t fnv1a(const std::string& text);

/// Checkpoint file: structured-text header (one line per tensor with name,
/// dtype, shape and payload byte offset, plus config hash, normalization
/// stats and meta entries) followed by a little-endian float32 payload with
/// every tensor offset 8-byte aligned.
void save_checkpoint(const ParamStore& store, const std::string& path);
ParamStore load_checkpoint(const std::string& path);

}  // namespace vgpl
