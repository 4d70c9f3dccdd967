// SPDX-License-Identifier: Apache-2.0
#include "osketch/instruction.hpp"

#include "osketch/errors.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace osketch {

HybridInstruction compose_hybrid(const Backend& backend, const InstructionEmbedding& ins,
                                 const std::string& optional_text) {
    const auto& desc = backend.descriptor();
    if (ins.provenance == Provenance::hybrid) {
        throw ValidationError("instruction", "already a hybrid instruction; composition is single-level");
    }
    ins.validate(desc);

    HybridInstruction h{ins, optional_text, ins};
    const TokenMatrix extra = backend.embed_text(optional_text);
    if (extra.rows() == 0) return h;

    const Eigen::Index total = ins.tokens.rows() + extra.rows();
    if (total > desc.max_tokens) {
        throw TokenOverflowError("hybrid instruction needs " + std::to_string(total) + " tokens (" +
                                 std::to_string(ins.tokens.rows()) + " learned + " + std::to_string(extra.rows()) +
                                 " optional), backend allows " + std::to_string(desc.max_tokens));
    }
    h.composed.tokens.resize(total, desc.token_dim);
    h.composed.tokens.topRows(ins.tokens.rows()) = ins.tokens;
    h.composed.tokens.bottomRows(extra.rows()) = extra;
    h.composed.learnable_mask.insert(h.composed.learnable_mask.end(), static_cast<std::size_t>(extra.rows()), false);
    h.composed.provenance = Provenance::hybrid;
    return h;
}

namespace {

static_assert(std::endian::native == std::endian::little, ".osi I/O assumes a little-endian host");
static_assert(std::numeric_limits<float>::is_iec559);

class Writer {
public:
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        out_.insert(out_.end(), p, p + n);
    }
    template <class T>
    void pod(T value) {
        bytes(&value, sizeof(T));
    }
    std::vector<std::uint8_t>& buffer() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    Reader(const std::vector<std::uint8_t>& in, std::size_t end) : in_(in), end_(end) {}

    void bytes(void* dst, std::size_t n) {
        if (pos_ + n > end_) throw FormatError(".osi: unexpected end of data");
        std::memcpy(dst, in_.data() + pos_, n);
        pos_ += n;
    }
    template <class T>
    T pod() {
        T value;
        bytes(&value, sizeof(T));
        return value;
    }
    std::size_t position() const { return pos_; }

private:
    const std::vector<std::uint8_t>& in_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, data, static_cast<uInt>(n));
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> serialize_instruction(const InstructionEmbedding& e, const BackendDescriptor& backend,
                                                std::uint64_t backend_seed) {
    if (e.learnable_mask.size() != static_cast<std::size_t>(e.n_tokens())) {
        throw ShapeError("save_instruction: mask length does not match token count");
    }
    if (!e.tokens.allFinite()) throw NonFiniteError("save_instruction: non-finite tokens");
    Writer w;
    w.bytes(kOsiMagic, 4);
    w.pod<std::uint32_t>(kOsiVersion);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(e.token_dim()));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(e.n_tokens()));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(backend.joint_dim));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(backend.name.size()));
    w.bytes(backend.name.data(), backend.name.size());
    w.pod<std::uint64_t>(backend_seed);
    for (Eigen::Index i = 0; i < e.tokens.rows(); ++i) {
        for (Eigen::Index j = 0; j < e.tokens.cols(); ++j) w.pod<float>(static_cast<float>(e.tokens(i, j)));
    }
    std::vector<std::uint8_t> mask((e.learnable_mask.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < e.learnable_mask.size(); ++i) {
        if (e.learnable_mask[i]) mask[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
    w.bytes(mask.data(), mask.size());
    w.pod<std::uint8_t>(static_cast<std::uint8_t>(e.provenance));
    const std::uint32_t crc = crc32_of(w.buffer().data(), w.buffer().size());
    w.pod<std::uint32_t>(crc);
    return std::move(w.buffer());
}

ParsedInstruction parse_instruction(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 + 4) throw ChecksumError(".osi: file too short");
    if (std::memcmp(bytes.data(), kOsiMagic, 4) != 0) throw FormatError(".osi: bad magic");
    const std::size_t body = bytes.size() - 4;
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + body, 4);
    if (crc32_of(bytes.data(), body) != stored_crc) throw ChecksumError(".osi: checksum mismatch (corrupt or truncated)");

    Reader r(bytes, body);
    char magic[4];
    r.bytes(magic, 4);
    ParsedInstruction out;
    out.header.version = r.pod<std::uint32_t>();
    if (out.header.version != kOsiVersion) {
        throw VersionError(".osi: unsupported version " + std::to_string(out.header.version));
    }
    out.header.token_dim = r.pod<std::uint32_t>();
    out.header.n_tokens = r.pod<std::uint32_t>();
    out.header.joint_dim = r.pod<std::uint32_t>();
    const auto name_len = r.pod<std::uint32_t>();
    if (name_len > body) throw FormatError(".osi: bad backend name length");
    out.header.backend_name.resize(name_len);
    r.bytes(out.header.backend_name.data(), name_len);
    out.header.seed = r.pod<std::uint64_t>();

    const std::size_t n = out.header.n_tokens;
    const std::size_t d = out.header.token_dim;
    const std::size_t expected = r.position() + n * d * sizeof(float) + (n + 7) / 8 + 1;
    if (expected != body) throw FormatError(".osi: payload size does not match header");

    InstructionEmbedding& e = out.embedding;
    e.tokens.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            e.tokens(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.pod<float>();
        }
    }
    std::vector<std::uint8_t> mask((n + 7) / 8);
    r.bytes(mask.data(), mask.size());
    e.learnable_mask.resize(n);
    for (std::size_t i = 0; i < n; ++i) e.learnable_mask[i] = (mask[i / 8] >> (i % 8)) & 1u;
    const auto provenance = r.pod<std::uint8_t>();
    if (provenance > static_cast<std::uint8_t>(Provenance::hybrid)) throw FormatError(".osi: bad provenance byte");
    e.provenance = static_cast<Provenance>(provenance);
    return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    namespace fs = std::filesystem;
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void save_instruction(const InstructionEmbedding& e, const std::filesystem::path& path,
                      const BackendDescriptor& backend, std::uint64_t backend_seed) {
    if (e.token_dim() != backend.token_dim) {
        throw DescriptorMismatchError("save_instruction: token width differs from backend token_dim");
    }
    write_file_atomic(path, serialize_instruction(e, backend, backend_seed));
}

InstructionEmbedding load_instruction(const std::filesystem::path& path, const BackendDescriptor& backend) {
    ParsedInstruction parsed = parse_instruction(read_file_bytes(path));
    const auto& h = parsed.header;
    if (h.token_dim != static_cast<std::uint32_t>(backend.token_dim)) {
        throw DescriptorMismatchError("instruction token_dim " + std::to_string(h.token_dim) +
                                      " != backend token_dim " + std::to_string(backend.token_dim));
    }
    if (h.joint_dim != static_cast<std::uint32_t>(backend.joint_dim)) {
        throw DescriptorMismatchError("instruction joint_dim " + std::to_string(h.joint_dim) +
                                      " != backend joint_dim " + std::to_string(backend.joint_dim));
    }
    if (h.n_tokens > static_cast<std::uint32_t>(backend.max_tokens)) {
        throw DescriptorMismatchError("instruction has " + std::to_string(h.n_tokens) +
                                      " tokens, backend max_tokens is " + std::to_string(backend.max_tokens));
    }
    return std::move(parsed.embedding);
}

}  // namespace osketch
