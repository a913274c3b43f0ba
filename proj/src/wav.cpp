#include "hiproto/wav.hpp"

#include <algorithm>
#include <cmath>

namespace hiproto {

namespace {

std::uint32_t rd_u32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

std::uint16_t rd_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(std::uint16_t(p[0]) | (std::uint16_t(p[1]) << 8));
}

}  // namespace

PcmData read_wav(const std::uint8_t* data, std::size_t len) {
    if (len < 12 || std::memcmp(data, "RIFF", 4) != 0 || std::memcmp(data + 8, "WAVE", 4) != 0)
        throw Error("malformed WAV header (missing RIFF/WAVE)");

    PcmData out;
    bool have_fmt = false;
    bool have_data = false;
    std::size_t pos = 12;
    while (pos + 8 <= len) {
        const char* id = reinterpret_cast<const char*>(data + pos);
        const std::uint32_t chunk_len = rd_u32(data + pos + 4);
        const std::size_t body = pos + 8;
        if (body + chunk_len > len) throw Error("malformed WAV: chunk exceeds file size");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (chunk_len < 16) throw Error("malformed WAV: short fmt chunk");
            const std::uint16_t format = rd_u16(data + body);
            const std::uint16_t channels = rd_u16(data + body + 2);
            const std::uint32_t rate = rd_u32(data + body + 4);
            const std::uint16_t bits = rd_u16(data + body + 14);
            if (format != 1) throw Error("unsupported WAV encoding: only 16-bit PCM is supported");
            if (bits != 16) throw Error("unsupported WAV bit depth: only 16-bit PCM is supported");
            if (channels == 0) throw Error("malformed WAV: zero channels");
            if (rate == 0) throw Error("malformed WAV: zero sample rate");
            out.channels = channels;
            out.sample_rate = static_cast<int>(rate);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            if (!have_fmt) throw Error("malformed WAV: data chunk before fmt chunk");
            const std::size_t n = chunk_len / 2;
            out.interleaved.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const std::uint16_t u = rd_u16(data + body + 2 * i);
                out.interleaved[i] = static_cast<std::int16_t>(u);
            }
            have_data = true;
        }
        // chunks are word-aligned
        pos = body + chunk_len + (chunk_len & 1);
    }
    if (!have_fmt || !have_data) throw Error("malformed WAV: missing fmt or data chunk");
    if (out.interleaved.size() % static_cast<std::size_t>(out.channels) != 0)
        throw Error("malformed WAV: data size not a multiple of the frame size");
    return out;
}

PcmData read_wav_file(const std::string& path) {
    const auto bytes = read_file(path);
    try {
        return read_wav(bytes.data(), bytes.size());
    } catch (const Error& e) {
        throw Error(path + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_wav(const Waveform& w) {
    ByteWriter b;
    const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
    b.str("RIFF");
    b.u32(36 + data_len);
    b.str("WAVE");
    b.str("fmt ");
    b.u32(16);
    b.u32(1u | (1u << 16));  // PCM, 1 channel
    b.u32(static_cast<std::uint32_t>(w.sample_rate));
    b.u32(static_cast<std::uint32_t>(w.sample_rate) * 2);  // byte rate
    b.u32(2u | (16u << 16));                               // block align, bits
    b.str("data");
    b.u32(data_len);
    for (double s : w.samples) {
        const double clipped = std::clamp(s, -1.0, 1.0);
        const int v = static_cast<int>(std::lrint(clipped * 32767.0));
        const auto s16 = static_cast<std::int16_t>(std::clamp(v, -32768, 32767));
        const auto u = static_cast<std::uint16_t>(s16);
        b.u8(static_cast<std::uint8_t>(u & 0xff));
        b.u8(static_cast<std::uint8_t>(u >> 8));
    }
    return b.data();
}

void write_wav_file(const std::string& path, const Waveform& w) {
    write_file(path, encode_wav(w));
}

}  // namespace hiproto
