#pragma once

#include <string>

#include "fino/audio.hpp"

namespace fino {

// Reads a RIFF/WAVE file. Only 16-bit PCM mono at 16 kHz is accepted;
// anything else is rejected with a message naming the offending property.
AudioSignal read_wav(const std::string& path);

// Writes 16-bit PCM mono. Samples are clamped to [-1, 1] and quantized
// deterministically, so identical signals produce identical bytes.
void write_wav(const std::string& path, const AudioSignal& signal);

}  // namespace fino
