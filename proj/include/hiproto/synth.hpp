#pragma once

#include <cstdint>
#include <string>

#include "hiproto/corpus.hpp"
#include "hiproto/taxonomy.hpp"
#include "hiproto/wav.hpp"

namespace hiproto {

// Shape and size of the generated toy corpus. Top-level branches alternate
// between tonal alarm-like classes and voiced speech-like classes; speech
// leaves are tagged `sid` in the emitted taxonomy.
struct SynthSpec {
    int top_classes = 2;
    int mid_per_top = 2;
    int leaves_per_mid = 3;
    int files_per_class = 20;
    std::uint64_t seed = 0;
};

struct SynthResult {
    TaxonomyTree tree;
    Manifest manifest;
    std::string taxonomy_path;
    std::string manifest_path;
};

// Taxonomy of the toy corpus without generating audio.
TaxonomyTree synth_taxonomy(const SynthSpec& spec);

// One waveform for (leaf index, file index); 1-2 s, 16 kHz mono,
// byte-identical for identical (spec.seed, indices).
Waveform synth_waveform(const SynthSpec& spec, int leaf_index, int file_index);

// Write WAV files, taxonomy.tsv and manifest.tsv under out_dir.
// jobs > 1 generates classes in parallel; output is identical either way.
SynthResult synth_generate(const SynthSpec& spec, const std::string& out_dir, int jobs = 1);

}  // namespace hiproto
