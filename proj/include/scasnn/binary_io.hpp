#pragma once

// Little-endian framed binary records used by checkpoints.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "scasnn/tensor.hpp"

namespace scasnn {

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

class BinaryWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u64(std::uint64_t v);
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v);
    void str(const std::string& s);
    void bits(const std::vector<std::uint8_t>& b);
    void tensor(const Tensor& t);
    void raw(const std::string& bytes) { buf_ += bytes; }

    const std::string& bytes() const { return buf_; }
    /// Writes magic, version, payload length, payload and its checksum.
    void finish(std::ostream& out, const std::string& magic, std::uint32_t version) const;

private:
    std::string buf_;
};

class BinaryReader {
public:
    /// Reads and checks the envelope written by BinaryWriter::finish.
    static BinaryReader open(std::istream& in, const std::string& magic, std::uint32_t version);
    explicit BinaryReader(std::string bytes, std::size_t base = 0) : buf_(std::move(bytes)), base_(base) {}

    std::uint8_t u8();
    std::uint64_t u64();
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    /// u64 that must fit a sane element count.
    std::size_t count(std::size_t limit = std::size_t{1} << 32);
    double f64();
    std::string str();
    std::vector<std::uint8_t> bits();
    Tensor tensor();

    bool at_end() const { return pos_ == buf_.size(); }
    void expect_end() const;
    std::size_t offset() const { return base_ + pos_; }
    [[noreturn]] void fail(const std::string& what) const;

private:
    const char* take(std::size_t n);

    std::string buf_;
    std::size_t base_ = 0;
    std::size_t pos_ = 0;
};

}  // namespace scasnn
