#pragma once

// Binary checkpoints.
//
//   "SRU2B1" | u8 version
//   u64 n | n x (u32 name_len, name, u32 rank, u64 dims[rank], f64 payload)   parameters
//   u64 n | ... same encoding ...                                            accumulators
//   u64 len | config JSON
//
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sru2b/config.hpp"
#include "sru2b/error.hpp"
#include "sru2b/params.hpp"
#include "sru2b/trainer.hpp"

namespace sru2b {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[6] = {'S', 'R', 'U', '2', 'B', '1'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig model;
    VocabSizes vocab;
    TrainConfig train;
    std::uint64_t global_step = 0;
    double partial_epoch_loss = 0.0;
    ModelParams params;
    ModelParams accumulators;
};

namespace detail {

class ByteWriter {
public:
    template <class T>
    void put(T v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const char*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    const std::vector<char>& bytes() const noexcept { return buf_; }

private:
    std::vector<char> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<char> bytes) : buf_(std::move(bytes)) {}

    template <class T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string(std::size_t n, const char* what) {
        need(n, what);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    void get_doubles(std::span<double> out, const char* what) {
        need(out.size() * sizeof(double), what);
        std::memcpy(out.data(), buf_.data() + pos_, out.size() * sizeof(double));
        pos_ += out.size() * sizeof(double);
    }
    std::size_t offset() const noexcept { return pos_; }
    void seek(std::size_t pos) { pos_ = pos; }
    void skip(std::size_t n, const char* what) {
        need(n, what);
        pos_ += n;
    }
    bool at_end() const noexcept { return pos_ == buf_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (buf_.size() - pos_ < n)
            throw FormatError(pos_, std::string("truncated checkpoint while reading ") + what);
    }

    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

inline void write_tensors(ByteWriter& w, const ModelParams& p) {
    std::uint64_t n = 0;
    for_each_tensor(p, [&](std::string_view, std::span<const double>, const auto&) { ++n; });
    w.put<std::uint64_t>(n);
    for_each_tensor(p, [&](std::string_view name, std::span<const double> v, const std::vector<std::uint64_t>& dims) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
        w.put_bytes(name.data(), name.size());
        w.put<std::uint32_t>(static_cast<std::uint32_t>(dims.size()));
        for (auto d : dims) w.put<std::uint64_t>(d);
        w.put_bytes(v.data(), v.size() * sizeof(double));
    });
}

// Reads tensors into `p`, whose structure (names, order, dims) was already
// derived from the stored config.
inline void read_tensors(ByteReader& r, ModelParams& p, const char* block) {
    const std::size_t start = r.offset();
    const auto n = r.get<std::uint64_t>("tensor count");
    std::uint64_t expected = 0;
    for_each_tensor(p, [&](std::string_view, std::span<const double>, const auto&) { ++expected; });
    if (n != expected)
        throw FormatError(start, std::string(block) + ": expected " + std::to_string(expected) + " tensors, found " +
                                     std::to_string(n));
    for_each_tensor(p, [&](std::string_view name, std::span<double> v, const std::vector<std::uint64_t>& dims) {
        const std::size_t at = r.offset();
        const auto len = r.get<std::uint32_t>("tensor name length");
        const auto got = r.get_string(len, "tensor name");
        if (got != name) throw FormatError(at, std::string(block) + ": expected tensor " + std::string(name) + ", found " + got);
        const auto rank = r.get<std::uint32_t>("tensor rank");
        if (rank != dims.size()) throw FormatError(at, "tensor " + got + ": unexpected rank");
        for (auto d : dims) {
            const std::size_t dat = r.offset();
            if (r.get<std::uint64_t>("tensor dims") != d) throw FormatError(dat, "tensor " + got + ": unexpected shape");
        }
        r.get_doubles(v, "tensor payload");
    });
}

}  // namespace detail

inline nlohmann::ordered_json checkpoint_meta(const Checkpoint& c) {
    nlohmann::ordered_json j;
    j["model"] = model_config_to_json(c.model);
    j["vocab"] = {{"items", c.vocab.items}, {"leaf", c.vocab.leaf}, {"category", c.vocab.category},
                  {"brand", c.vocab.brand}, {"shop", c.vocab.shop},  {"users", c.vocab.users}};
    j["loss"] = loss_config_to_json(c.train.loss);
    j["train"] = train_config_to_json(c.train);
    j["global_step"] = c.global_step;
    j["partial_epoch_loss"] = c.partial_epoch_loss;
    return j;
}

inline std::vector<char> serialize_checkpoint(const Checkpoint& c) {
    detail::ByteWriter w;
    w.put_bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.put<std::uint8_t>(kCheckpointVersion);
    detail::write_tensors(w, c.params);
    detail::write_tensors(w, c.accumulators);
    const std::string meta = checkpoint_meta(c).dump();
    w.put<std::uint64_t>(meta.size());
    w.put_bytes(meta.data(), meta.size());
    return w.bytes();
}

inline Checkpoint deserialize_checkpoint(std::vector<char> bytes) {
    detail::ByteReader r(std::move(bytes));
    if (r.get_string(sizeof kCheckpointMagic, "magic") != std::string(kCheckpointMagic, sizeof kCheckpointMagic))
        throw FormatError(0, "not a checkpoint: bad magic bytes");
    const auto version = r.get<std::uint8_t>("version");
    if (version != kCheckpointVersion)
        throw FormatError(6, "unsupported checkpoint version " + std::to_string(version));

    // The JSON trailer sits after two variable-length blocks, so first skip
    // over them structurally to find it.
    const std::size_t tensors_at = r.offset();
    auto skip_block = [&](const char* block) {
        const auto n = r.get<std::uint64_t>("tensor count");
        for (std::uint64_t t = 0; t < n; ++t) {
            const auto len = r.get<std::uint32_t>("tensor name length");
            r.skip(len, "tensor name");
            const auto rank = r.get<std::uint32_t>("tensor rank");
            std::uint64_t count = 1;
            for (std::uint32_t d = 0; d < rank; ++d) count *= r.get<std::uint64_t>("tensor dims");
            if (count > (std::uint64_t{1} << 40)) throw FormatError(r.offset(), std::string(block) + ": implausible tensor size");
            r.skip(static_cast<std::size_t>(count * sizeof(double)), "tensor payload");
        }
    };
    skip_block("parameters");
    skip_block("accumulators");
    const std::size_t meta_at = r.offset();
    const auto meta_len = r.get<std::uint64_t>("config length");
    const std::string meta_text = r.get_string(static_cast<std::size_t>(meta_len), "config");
    if (!r.at_end()) throw FormatError(r.offset(), "trailing bytes after config");

    Checkpoint c;
    try {
        const auto j = nlohmann::json::parse(meta_text);
        nlohmann::json root;
        root["model"] = j.at("model");
        root["loss"] = j.at("loss");
        root["train"] = j.at("train");
        const RunConfig rc = run_config_from_json(root);
        c.model = rc.model;
        c.train = rc.train;
        const auto& v = j.at("vocab");
        c.vocab = {v.at("items").get<std::size_t>(),    v.at("leaf").get<std::size_t>(),
                   v.at("category").get<std::size_t>(), v.at("brand").get<std::size_t>(),
                   v.at("shop").get<std::size_t>(),     v.at("users").get<std::size_t>()};
        c.global_step = j.at("global_step").get<std::uint64_t>();
        c.partial_epoch_loss = j.at("partial_epoch_loss").get<double>();
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(meta_at, std::string("malformed checkpoint config: ") + e.what());
    }

    c.params = zero_params(c.model, c.vocab);
    c.accumulators = zero_params(c.model, c.vocab);
    // Second pass, now with the expected structure in hand.
    r.seek(tensors_at);
    detail::read_tensors(r, c.params, "parameters");
    detail::read_tensors(r, c.accumulators, "accumulators");
    return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(c);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw PreconditionError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionError("cannot read checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(std::move(bytes));
}

// Snapshot of a model plus its trainer.
inline Checkpoint make_checkpoint(const Model& m, const Trainer& t) {
    return {m.config, VocabSizes::of(m.vocab), t.config(), t.global_step(), t.partial_epoch_loss(), m.params,
            t.optimizer().accumulators};
}

// Snapshot of an untrained model (fresh accumulators, step 0).
inline Checkpoint make_checkpoint(const Model& m, const TrainConfig& cfg) {
    return {m.config, VocabSizes::of(m.vocab), cfg, 0, 0.0, m.params, zeros_like(m.params)};
}

// Throws MismatchError when the checkpoint does not fit the given model
// configuration and vocabulary.
inline void check_compatible(const Checkpoint& c, const ModelConfig& cfg, const Vocabulary& vocab) {
    auto fail = [](const std::string& what) { throw MismatchError("checkpoint does not match configuration: " + what); };
    if (c.model.embed_dim != cfg.embed_dim)
        fail("embed_dim " + std::to_string(c.model.embed_dim) + " vs " + std::to_string(cfg.embed_dim));
    const auto& a = c.model.feature_dims;
    const auto& b = cfg.feature_dims;
    if (a.item_id != b.item_id || a.leaf != b.leaf || a.category != b.category || a.brand != b.brand || a.shop != b.shop)
        fail("feature embedding widths differ");
    if (c.model.clicked != cfg.clicked) fail(std::string("clicked encoder ") + to_string(c.model.clicked) + " vs " + to_string(cfg.clicked));
    if (c.model.share_label_ffn != cfg.share_label_ffn) fail("share_label_ffn differs");
    if (!(c.vocab == VocabSizes::of(vocab))) fail("vocabulary sizes differ from the data");
}

inline Model model_from_checkpoint(const Checkpoint& c, Vocabulary vocab) {
    if (!(c.vocab == VocabSizes::of(vocab))) throw MismatchError("checkpoint vocabulary sizes differ from the data");
    return Model{c.model, std::move(vocab), c.params};
}

}  // namespace sru2b
