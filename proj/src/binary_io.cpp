#include "scasnn/binary_io.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <iterator>
#include <ostream>

#include "scasnn/errors.hpp"

namespace scasnn {

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

void BinaryWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void BinaryWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::str(const std::string& s) {
    u64(s.size());
    buf_ += s;
}

void BinaryWriter::bits(const std::vector<std::uint8_t>& b) {
    u64(b.size());
    buf_.append(reinterpret_cast<const char*>(b.data()), b.size());
}

void BinaryWriter::tensor(const Tensor& t) {
    u64(t.rank());
    for (auto d : t.shape()) u64(d);
    for (double v : t.values()) f64(v);
}

void BinaryWriter::finish(std::ostream& out, const std::string& magic, std::uint32_t version) const {
    BinaryWriter head;
    head.raw(magic);
    head.u64(version);
    head.u64(buf_.size());
    out.write(head.bytes().data(), static_cast<std::streamsize>(head.bytes().size()));
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    BinaryWriter tail;
    tail.u64(fnv1a(buf_.data(), buf_.size()));
    out.write(tail.bytes().data(), 8);
    if (!out) throw FormatError("write failed", head.bytes().size() + buf_.size());
}

BinaryReader BinaryReader::open(std::istream& in, const std::string& magic, std::uint32_t version) {
    std::string all{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    BinaryReader r(std::move(all));
    const char* m = r.take(magic.size());
    if (std::memcmp(m, magic.data(), magic.size()) != 0) throw FormatError("bad magic", 0);
    const std::uint64_t v = r.u64();
    if (v != version)
        throw FormatError("unsupported version " + std::to_string(v) + ", expected " + std::to_string(version),
                          magic.size());
    const std::size_t len = r.count(r.buf_.size());
    const std::size_t start = r.pos_;
    const char* payload = r.take(len);
    const std::uint64_t stored = r.u64();
    if (!r.at_end()) r.fail("trailing bytes after checksum");
    if (fnv1a(payload, len) != stored) throw FormatError("checksum mismatch", start + len);
    return BinaryReader(r.buf_.substr(start, len), start);
}

const char* BinaryReader::take(std::size_t n) {
    if (n > buf_.size() - pos_) fail("truncated: need " + std::to_string(n) + " more bytes");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
}

void BinaryReader::fail(const std::string& what) const { throw FormatError(what, offset()); }

std::uint8_t BinaryReader::u8() { return static_cast<std::uint8_t>(*take(1)); }

std::uint64_t BinaryReader::u64() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(8));
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

std::size_t BinaryReader::count(std::size_t limit) {
    const std::uint64_t v = u64();
    if (v > limit) {
        pos_ -= 8;
        fail("implausible count " + std::to_string(v));
    }
    return static_cast<std::size_t>(v);
}

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::string BinaryReader::str() {
    const std::size_t n = count(buf_.size() - pos_);
    return std::string(take(n), n);
}

std::vector<std::uint8_t> BinaryReader::bits() {
    const std::size_t n = count(buf_.size() - pos_);
    const char* p = take(n);
    return std::vector<std::uint8_t>(p, p + n);
}

Tensor BinaryReader::tensor() {
    const std::size_t at = offset();
    const std::size_t rank = count(8);
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
        d = count(buf_.size());
        if (d == 0) throw FormatError("tensor has a zero extent", at);
        n *= d;
        if (n > buf_.size()) throw FormatError("tensor larger than the file", at);
    }
    if (rank == 0) throw FormatError("tensor has rank 0", at);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return Tensor(std::move(shape), std::move(v));
}

void BinaryReader::expect_end() const {
    if (!at_end()) fail("unexpected trailing data");
}

}  // namespace scasnn
