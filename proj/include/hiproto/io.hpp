#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace hiproto {

// All structured failures surface as Error with a human-readable message.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(const void* data, std::size_t len);
Digest sha256(const std::string& s);
std::string to_hex(const Digest& d);

// Little-endian binary encoding, independent of host byte order.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void str(const std::string& s) { bytes(s.data(), s.size()); }

    const std::vector<std::uint8_t>& data() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t len) : data_(data), len_(len) {}
    explicit ByteReader(const std::vector<std::uint8_t>& v) : data_(v.data()), len_(v.size()) {}

    std::uint8_t u8() { return take(1)[0]; }
    std::uint32_t u32() {
        const std::uint8_t* p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const std::uint8_t* p = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(std::size_t n) {
        const std::uint8_t* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
    void raw(void* out, std::size_t n) { std::memcpy(out, take(n), n); }

    std::size_t remaining() const { return len_ - pos_; }
    bool at_end() const { return pos_ == len_; }

private:
    const std::uint8_t* take(std::size_t n) {
        if (pos_ + n > len_) throw Error("truncated payload");
        const std::uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }

    const std::uint8_t* data_;
    std::size_t len_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
std::string read_text_file(const std::string& path);
void write_file(const std::string& path, const void* data, std::size_t len);
void write_file(const std::string& path, const std::vector<std::uint8_t>& data);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace hiproto
