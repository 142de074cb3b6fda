#pragma once

// Little-endian binary encoding helpers and atomic file replacement.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace repast {

/// I/O failure (unreadable/unwritable path, truncated file).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Structurally invalid file: wrong magic, unsupported version, inconsistent header.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ByteWriter {
public:
    template <class V>
        requires std::is_arithmetic_v<V>
    void put(V v) {
        using U = std::conditional_t<sizeof(V) == 1, std::uint8_t,
                  std::conditional_t<sizeof(V) == 2, std::uint16_t,
                  std::conditional_t<sizeof(V) == 4, std::uint32_t, std::uint64_t>>>;
        const U u = std::bit_cast<U>(v);
        for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
    void put_bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void put_string(const std::string& s) {
        put(static_cast<std::uint32_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }
    const std::vector<std::uint8_t>& bytes() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<std::uint8_t> b, std::string what = "file") : buf_(std::move(b)), what_(std::move(what)) {}

    template <class V>
        requires std::is_arithmetic_v<V>
    V get() {
        using U = std::conditional_t<sizeof(V) == 1, std::uint8_t,
                  std::conditional_t<sizeof(V) == 2, std::uint16_t,
                  std::conditional_t<sizeof(V) == 4, std::uint32_t, std::uint64_t>>>;
        need(sizeof(U));
        U u = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(static_cast<U>(buf_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return std::bit_cast<V>(u);
    }
    std::span<const std::uint8_t> get_bytes(std::size_t n) {
        need(n);
        std::span<const std::uint8_t> s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::string get_string(std::size_t max_len = 1u << 20) {
        const auto n = get<std::uint32_t>();
        if (n > max_len) throw FormatError(what_ + ": string length " + std::to_string(n) + " is implausible");
        auto b = get_bytes(n);
        return std::string(b.begin(), b.end());
    }
    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) throw IoError(what_ + ": unexpected end of file");
    }
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
    std::string what_;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open '" + p.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temp file, then renames over the target.
inline void write_file_atomic(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
    const std::filesystem::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, p, ec);
    if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + p.string() + "': " + ec.message());
}

inline void write_text_atomic(const std::filesystem::path& p, const std::string& s) {
    write_file_atomic(p, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

}  // namespace repast
