#include "vgpl/param_store.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace vgpl {

Tensor& ParamStore::create(const std::string& name, Tensor value, bool trainable) {
    if (entries_.count(name)) throw ContractViolation("duplicate parameter name: " + name);
    auto [it, ok] = entries_.emplace(name, Entry{std::move(value), trainable});
    (void)ok;
    return it->second.value;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractViolation("unknown parameter: " + name);
    return it->second.value;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractViolation("unknown parameter: " + name);
    return it->second.value;
}

bool ParamStore::trainable(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractViolation("unknown parameter: " + name);
    return it->second.trainable;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
}

void ParamStore::attach_all(Tape& tape) {
    for (auto& [k, e] : entries_)
        if (e.trainable) tape.watch(e.value);
}

uint64_t fnv1a(const std::string& text) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path) {
    // first pass: payload layout
    struct Item {
        std::string name;
        const Tensor* t;
        bool trainable;
        uint64_t offset;
    };
    std::vector<Item> items;
    uint64_t off = 0;
    for (const auto& name : store.names()) {
        const Tensor& t = store.get(name);
        items.push_back({name, &t, store.trainable(name), off});
        off += static_cast<uint64_t>(t.numel()) * 4;
        off = (off + 7) & ~7ull;  // 8-byte aligned offsets
    }

    std::ostringstream head;
    head << "VGPLCKPT 1\n";
    char hx[32];
    std::snprintf(hx, sizeof(hx), "%016llx", static_cast<unsigned long long>(store.config_hash));
    head << "config_hash " << hx << "\n";
    head << "norm_mean " << format_double(store.norm_stats.mean[0]) << " "
         << format_double(store.norm_stats.mean[1]) << " "
         << format_double(store.norm_stats.mean[2]) << "\n";
    head << "norm_std " << format_double(store.norm_stats.std[0]) << " "
         << format_double(store.norm_stats.std[1]) << " "
         << format_double(store.norm_stats.std[2]) << "\n";
    for (const auto& [k, v] : store.meta) head << "meta " << k << " " << v << "\n";
    for (const auto& it : items) {
        head << "tensor " << it.name << " f32 " << (it.trainable ? 1 : 0) << " "
             << it.t->rank();
        for (int d : it.t->shape()) head << " " << d;
        head << " @ " << it.offset << "\n";
    }
    head << "payload " << off << "\n";

    std::ofstream f(path, std::ios::binary);
    if (!f) throw ContractViolation("cannot open checkpoint for writing: " + path);
    const std::string header = head.str();
    f.write(header.data(), static_cast<std::streamsize>(header.size()));

    std::vector<char> payload(static_cast<size_t>(off), 0);
    for (const auto& it : items) {
        float* dst = reinterpret_cast<float*>(payload.data() + it.offset);
        const double* src = it.t->data();
        for (int64_t i = 0; i < it.t->numel(); ++i) dst[i] = static_cast<float>(src[i]);
    }
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!f) throw ContractViolation("checkpoint write failed: " + path);
}

ParamStore load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open checkpoint: " + path);
    ParamStore store;

    struct Item {
        std::string name;
        bool trainable;
        Shape shape;
        uint64_t offset;
    };
    std::vector<Item> items;
    uint64_t payload_size = 0;

    std::string line;
    if (!std::getline(f, line) || line != "VGPLCKPT 1")
        throw ParseError("checkpoint: bad magic or version at offset 0");
    bool saw_payload = false;
    while (std::getline(f, line)) {
        std::istringstream ls(line);
        std::string kw;
        ls >> kw;
        if (kw == "config_hash") {
            std::string hex;
            ls >> hex;
            store.config_hash = std::stoull(hex, nullptr, 16);
        } else if (kw == "norm_mean") {
            ls >> store.norm_stats.mean[0] >> store.norm_stats.mean[1] >> store.norm_stats.mean[2];
        } else if (kw == "norm_std") {
            ls >> store.norm_stats.std[0] >> store.norm_stats.std[1] >> store.norm_stats.std[2];
        } else if (kw == "meta") {
            std::string k, v;
            ls >> k;
            std::getline(ls, v);
            if (!v.empty() && v[0] == ' ') v.erase(0, 1);
            store.meta[k] = v;
        } else if (kw == "tensor") {
            Item it;
            std::string dtype, at;
            int trainable = 0, rank = 0;
            ls >> it.name >> dtype >> trainable >> rank;
            if (dtype != "f32") throw ParseError("checkpoint: unsupported dtype " + dtype);
            it.trainable = trainable != 0;
            for (int i = 0; i < rank; ++i) {
                int d;
                ls >> d;
                it.shape.push_back(d);
            }
            ls >> at >> it.offset;
            if (!ls || at != "@") throw ParseError("checkpoint: malformed tensor line: " + line);
            items.push_back(std::move(it));
        } else if (kw == "payload") {
            ls >> payload_size;
            saw_payload = true;
            break;
        } else {
            throw ParseError("checkpoint: unknown header keyword: " + kw);
        }
        if (!ls) throw ParseError("checkpoint: malformed header line: " + line);
    }
    if (!saw_payload) throw ParseError("checkpoint: truncated header (no payload marker)");

    std::vector<char> payload(static_cast<size_t>(payload_size));
    f.read(payload.data(), static_cast<std::streamsize>(payload_size));
    if (static_cast<uint64_t>(f.gcount()) != payload_size)
        throw ParseError("checkpoint: truncated payload (expected " +
                         std::to_string(payload_size) + " bytes)");

    for (const auto& it : items) {
        const int64_t n = numel_of(it.shape);
        if (it.offset + static_cast<uint64_t>(n) * 4 > payload_size)
            throw ParseError("checkpoint: tensor " + it.name + " exceeds payload");
        Tensor t = Tensor::zeros(it.shape);
        const float* src = reinterpret_cast<const float*>(payload.data() + it.offset);
        for (int64_t i = 0; i < n; ++i) t[i] = static_cast<double>(src[i]);
        store.create(it.name, std::move(t), it.trainable);
    }
    return store;
}

}  // namespace vgpl
