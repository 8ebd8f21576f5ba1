#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "pseudocl/dataset.hpp"
#include "pseudocl/errors.hpp"
#include "pseudocl/nn.hpp"

namespace pseudocl {

/// Model plus the true-class order of the classes it has seen (needed to
/// re-evaluate it on a dataset).
struct Checkpoint {
    Model model;
    std::vector<std::int64_t> class_order;
    bool operator==(const Checkpoint&) const = default;
};

// Binary layout, all integers little-endian, doubles as IEEE-754 bit patterns:
//
//   char[8]  magic "PCLCKPT1"
//   u32      format version (1)
//   u32      layer count L (hidden layers + head)
//   L times: u64 out_dim, u64 in_dim, f64[out_dim*in_dim] weights (row-major), f64[out_dim] bias
//   u64      head out_dim
//   u64      model seed
//   u64      S, then u64[S] seeds consumed
//   u64      C, then i64[C] class order
//   u64      FNV-1a 64 checksum of every preceding byte
namespace detail {

inline constexpr char kCheckpointMagic[8] = {'P', 'C', 'L', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(const std::string& bytes, std::size_t len) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= static_cast<unsigned char>(bytes[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

class ByteWriter {
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void raw(const char* p, std::size_t n) { buf_.append(p, n); }
    std::string& bytes() { return buf_; }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(const std::string& b, std::size_t end) : buf_(b), end_(end) {}
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64() { return std::bit_cast<double>(get(8)); }
    void raw(char* p, std::size_t n) {
        need(n);
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::size_t remaining() const { return end_ - pos_; }

private:
    void need(std::size_t n) const {
        if (end_ - pos_ < n) throw IoError("checkpoint: unexpected end of data");
    }
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    const std::string& buf_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

inline void write_layer(ByteWriter& w, const DenseLayer& l) {
    w.u64(l.out_dim());
    w.u64(l.in_dim());
    for (double v : l.weights.values()) w.f64(v);
    for (double v : l.bias) w.f64(v);
}

inline DenseLayer read_layer(ByteReader& r) {
    const auto out = r.u64(), in = r.u64();
    if (out == 0 || in == 0 || out > (1u << 24) || in > (1u << 24) || out * in > r.remaining() / 8)
        throw IoError("checkpoint: implausible layer shape");
    DenseLayer l{Matrix(out, in), std::vector<double>(out)};
    for (double& v : l.weights.values()) v = r.f64();
    for (double& v : l.bias) v = r.f64();
    return l;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
    detail::ByteWriter w;
    w.raw(detail::kCheckpointMagic, 8);
    w.u32(detail::kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(ck.model.hidden.size() + 1));
    for (const auto& l : ck.model.hidden) detail::write_layer(w, l);
    detail::write_layer(w, ck.model.head);
    w.u64(ck.model.head_dim());
    w.u64(ck.model.seed);
    w.u64(ck.model.seed_log.size());
    for (auto s : ck.model.seed_log) w.u64(s);
    w.u64(ck.class_order.size());
    for (auto c : ck.class_order) w.u64(static_cast<std::uint64_t>(c));
    const auto sum = detail::fnv1a64(w.bytes(), w.bytes().size());
    w.u64(sum);
    return std::move(w.bytes());
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 8 + 8 + 8) throw IoError("checkpoint: file too short");
    const std::size_t body = bytes.size() - 8;
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
        stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[body + i])) << (8 * i);
    if (stored != detail::fnv1a64(bytes, body)) throw IoError("checkpoint: checksum mismatch");

    detail::ByteReader r(bytes, body);
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, detail::kCheckpointMagic, 8) != 0) throw IoError("checkpoint: bad magic");
    if (r.u32() != detail::kCheckpointVersion) throw IoError("checkpoint: unsupported version");
    const auto layers = r.u32();
    if (layers == 0) throw IoError("checkpoint: no layers");
    Checkpoint ck;
    for (std::uint32_t i = 0; i + 1 < layers; ++i) ck.model.hidden.push_back(detail::read_layer(r));
    ck.model.head = detail::read_layer(r);
    for (std::size_t i = 0; i < ck.model.hidden.size(); ++i) {
        const std::size_t expect = i + 1 < ck.model.hidden.size() ? ck.model.hidden[i + 1].in_dim() : ck.model.head.in_dim();
        if (ck.model.hidden[i].out_dim() != expect) throw IoError("checkpoint: inconsistent layer shapes");
    }
    if (r.u64() != ck.model.head_dim()) throw IoError("checkpoint: head dimension mismatch");
    ck.model.seed = r.u64();
    const auto n_seeds = r.u64();
    if (n_seeds > r.remaining() / 8) throw IoError("checkpoint: implausible seed count");
    for (std::uint64_t i = 0; i < n_seeds; ++i) ck.model.seed_log.push_back(r.u64());
    const auto n_classes = r.u64();
    if (n_classes > r.remaining() / 8) throw IoError("checkpoint: implausible class count");
    for (std::uint64_t i = 0; i < n_classes; ++i) ck.class_order.push_back(static_cast<std::int64_t>(r.u64()));
    if (r.remaining() != 0) throw IoError("checkpoint: trailing bytes");
    return ck;
}

inline void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    detail::write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(detail::read_file(path));
}

}  // namespace pseudocl
