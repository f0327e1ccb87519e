#pragma once

#include <cstdint>
#include <vector>

namespace fino {

struct AudioSignal {
  std::vector<double> samples;  // mono, in [-1, 1]
  int sample_rate = 16000;
};

struct MfccConfig {
  int frame_length = 512;  // 32 ms at 16 kHz; power of two, hop == length
  int n_mels = 40;
  int n_coeffs = 20;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  int target_frames = 256;  // fixed time axis after fix_length
  double log_floor = 1e-10;
  // Which side survives when there are more frames than target_frames.
  enum class Clip { Head, Tail } clip = Clip::Head;

  int n_bins() const { return frame_length / 2 + 1; }
};

// [n_coeffs, n_frames] row-major.
struct MfccFeatures {
  int n_coeffs = 0;
  int n_frames = 0;
  std::vector<double> data;

  double at(int coeff, int frame) const {
    return data[static_cast<size_t>(coeff) * static_cast<size_t>(n_frames) +
                static_cast<size_t>(frame)];
  }
};

// Non-overlapping frames of `frame_length` samples; a trailing partial
// frame is dropped. Empty signals are a data error.
std::vector<std::vector<double>> frame_signal(const AudioSignal& signal,
                                              int frame_length);

// Periodic Hann window, w[n] = 0.5 * (1 - cos(2 pi n / N)).
std::vector<double> hann_window(int length);

// In-place iterative radix-2 FFT; length must be a power of two >= 2.
void fft_radix2(std::vector<double>& re, std::vector<double>& im);

// One-sided |X_k|^2 of the windowed frame, k = 0..N/2. The frame length
// must be a power of two or a parameter error is raised.
std::vector<double> power_spectrum(const std::vector<double>& frame);

struct MelFilterbank {
  // Dense [n_mels, n_bins] triangle weights, area-normalized so each
  // triangle integrates to one over frequency.
  int n_mels = 0;
  int n_bins = 0;
  std::vector<double> weights;
  std::vector<double> center_freqs_hz;  // strictly increasing

  double weight(int mel, int bin) const {
    return weights[static_cast<size_t>(mel) * static_cast<size_t>(n_bins) +
                   static_cast<size_t>(bin)];
  }
};

MelFilterbank build_mel_filterbank(int n_mels, int n_bins, int sample_rate,
                                   double fmin_hz, double fmax_hz);

// log(filterbank . power + floor), natural log.
std::vector<double> log_mel_energies(const std::vector<double>& power,
                                     const MelFilterbank& fb, double log_floor);

// Orthonormal DCT-II, keeping the first n_coeffs coefficients.
std::vector<double> dct2_orthonormal(const std::vector<double>& x, int n_coeffs);

// Clips or zero-pads the frame axis of [n_coeffs, n_frames] to `target`.
MfccFeatures fix_length(const MfccFeatures& in, int target,
                        MfccConfig::Clip clip);

// Full frontend: frame -> window -> power -> mel -> log -> DCT -> fix_length.
MfccFeatures mfcc_features(const AudioSignal& signal, const MfccConfig& config);

}  // namespace fino
