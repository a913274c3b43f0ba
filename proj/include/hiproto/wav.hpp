#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hiproto/io.hpp"

namespace hiproto {

// Mono audio at a fixed rate. Samples live in [-1, 1] after normalization.
struct Waveform {
    std::vector<double> samples;
    int sample_rate = 16000;

    std::size_t size() const { return samples.size(); }
    double duration() const {
        return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }
};

// Raw decode of a 16-bit PCM RIFF/WAVE file; channels interleaved.
struct PcmData {
    std::vector<std::int16_t> interleaved;
    int sample_rate = 0;
    int channels = 0;
};

PcmData read_wav(const std::uint8_t* data, std::size_t len);
PcmData read_wav_file(const std::string& path);

// 16-bit PCM, mono. Samples outside [-1, 1] are clipped.
std::vector<std::uint8_t> encode_wav(const Waveform& w);
void write_wav_file(const std::string& path, const Waveform& w);

}  // namespace hiproto
