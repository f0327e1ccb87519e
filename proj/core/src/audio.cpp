#include "fino/audio.hpp"

#include <algorithm>
#include <cmath>

#include "fino/error.hpp"

namespace fino {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool is_power_of_two(int n) { return n >= 2 && (n & (n - 1)) == 0; }

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

}  // namespace

std::vector<std::vector<double>> frame_signal(const AudioSignal& signal,
                                              int frame_length) {
  if (signal.samples.empty()) raise_data("frame_signal: empty signal");
  if (frame_length < 1) raise_contract("frame_signal: frame length must be >= 1");
  const size_t n = signal.samples.size() / static_cast<size_t>(frame_length);
  std::vector<std::vector<double>> frames(n);
  for (size_t f = 0; f < n; ++f)
    frames[f].assign(
        signal.samples.begin() + static_cast<std::ptrdiff_t>(f) * frame_length,
        signal.samples.begin() +
            static_cast<std::ptrdiff_t>(f + 1) * frame_length);
  return frames;
}

std::vector<double> hann_window(int length) {
  if (length < 1) raise_contract("hann_window: length must be >= 1");
  std::vector<double> w(static_cast<size_t>(length));
  for (int n = 0; n < length; ++n)
    w[static_cast<size_t>(n)] =
        0.5 * (1.0 - std::cos(2.0 * kPi * n / static_cast<double>(length)));
  return w;
}

void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
  const size_t n = re.size();
  if (im.size() != n) raise_contract("fft: re/im length mismatch");
  if (!is_power_of_two(static_cast<int>(n)))
    raise_contract("fft: length " + std::to_string(n) +
                   " is not a power of two");
  // Bit-reversal permutation.
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (size_t j = 0; j < len / 2; ++j) {
        const size_t a = i + j, b = i + j + len / 2;
        const double tr = re[b] * cr - im[b] * ci;
        const double ti = re[b] * ci + im[b] * cr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

std::vector<double> power_spectrum(const std::vector<double>& frame) {
  const int n = static_cast<int>(frame.size());
  if (!is_power_of_two(n))
    raise_contract("power_spectrum: frame length " + std::to_string(n) +
                   " is not a power of two");
  std::vector<double> re(frame), im(frame.size(), 0.0);
  fft_radix2(re, im);
  std::vector<double> power(static_cast<size_t>(n / 2 + 1));
  for (int k = 0; k <= n / 2; ++k)
    power[static_cast<size_t>(k)] =
        re[static_cast<size_t>(k)] * re[static_cast<size_t>(k)] +
        im[static_cast<size_t>(k)] * im[static_cast<size_t>(k)];
  return power;
}

MelFilterbank build_mel_filterbank(int n_mels, int n_bins, int sample_rate,
                                   double fmin_hz, double fmax_hz) {
  if (n_mels < 1 || n_bins < 3)
    raise_contract("mel_filterbank: need n_mels >= 1 and n_bins >= 3");
  if (!(fmin_hz >= 0) || !(fmax_hz > fmin_hz) ||
      fmax_hz > sample_rate / 2.0 + 1e-9)
    raise_contract("mel_filterbank: frequency range must satisfy 0 <= fmin < fmax <= Nyquist");

  const int n_fft = (n_bins - 1) * 2;
  const double mel_lo = hz_to_mel(fmin_hz);
  const double mel_hi = hz_to_mel(fmax_hz);
  std::vector<double> edges_hz(static_cast<size_t>(n_mels) + 2);
  for (int j = 0; j < n_mels + 2; ++j)
    edges_hz[static_cast<size_t>(j)] = mel_to_hz(
        mel_lo + (mel_hi - mel_lo) * j / static_cast<double>(n_mels + 1));

  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.n_bins = n_bins;
  fb.weights.assign(static_cast<size_t>(n_mels) * static_cast<size_t>(n_bins),
                    0.0);
  fb.center_freqs_hz.resize(static_cast<size_t>(n_mels));
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges_hz[static_cast<size_t>(m)];
    const double mid = edges_hz[static_cast<size_t>(m) + 1];
    const double hi = edges_hz[static_cast<size_t>(m) + 2];
    fb.center_freqs_hz[static_cast<size_t>(m)] = mid;
    // Triangle area over frequency is (hi-lo)/2; scaling by 2/(hi-lo)
    // normalizes each filter to unit area.
    const double norm = 2.0 / (hi - lo);
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate /
                       static_cast<double>(n_fft);
      double w = 0.0;
      if (f > lo && f < mid && mid > lo)
        w = (f - lo) / (mid - lo);
      else if (f == mid)
        w = 1.0;
      else if (f > mid && f < hi && hi > mid)
        w = (hi - f) / (hi - mid);
      fb.weights[static_cast<size_t>(m) * static_cast<size_t>(n_bins) +
                 static_cast<size_t>(k)] = w * norm;
    }
  }
  return fb;
}

std::vector<double> log_mel_energies(const std::vector<double>& power,
                                     const MelFilterbank& fb,
                                     double log_floor) {
  if (static_cast<int>(power.size()) != fb.n_bins)
    raise_contract("log_mel_energies: power has " +
                   std::to_string(power.size()) + " bins, filterbank expects " +
                   std::to_string(fb.n_bins));
  if (!(log_floor > 0)) raise_contract("log_mel_energies: floor must be > 0");
  std::vector<double> out(static_cast<size_t>(fb.n_mels));
  for (int m = 0; m < fb.n_mels; ++m) {
    double acc = 0.0;
    for (int k = 0; k < fb.n_bins; ++k)
      acc += fb.weight(m, k) * power[static_cast<size_t>(k)];
    out[static_cast<size_t>(m)] = std::log(acc + log_floor);
  }
  return out;
}

std::vector<double> dct2_orthonormal(const std::vector<double>& x,
                                     int n_coeffs) {
  const int m = static_cast<int>(x.size());
  if (m < 1 || n_coeffs < 1 || n_coeffs > m)
    raise_contract("dct2: need 1 <= n_coeffs <= input length");
  std::vector<double> out(static_cast<size_t>(n_coeffs));
  const double a0 = std::sqrt(1.0 / m);
  const double ai = std::sqrt(2.0 / m);
  for (int i = 0; i < n_coeffs; ++i) {
    double acc = 0.0;
    for (int j = 0; j < m; ++j)
      acc += x[static_cast<size_t>(j)] *
             std::cos(kPi * i * (j + 0.5) / static_cast<double>(m));
    out[static_cast<size_t>(i)] = (i == 0 ? a0 : ai) * acc;
  }
  return out;
}

MfccFeatures fix_length(const MfccFeatures& in, int target,
                        MfccConfig::Clip clip) {
  if (target < 1) raise_contract("fix_length: target must be >= 1");
  MfccFeatures out;
  out.n_coeffs = in.n_coeffs;
  out.n_frames = target;
  out.data.assign(static_cast<size_t>(in.n_coeffs) * static_cast<size_t>(target),
                  0.0);
  const int copy = std::min(in.n_frames, target);
  // Head keeps the first `copy` frames; Tail keeps the last ones.
  const int src_off = (clip == MfccConfig::Clip::Tail && in.n_frames > target)
                          ? in.n_frames - target
                          : 0;
  for (int c = 0; c < in.n_coeffs; ++c)
    for (int f = 0; f < copy; ++f)
      out.data[static_cast<size_t>(c) * static_cast<size_t>(target) +
               static_cast<size_t>(f)] = in.at(c, src_off + f);
  return out;
}

MfccFeatures mfcc_features(const AudioSignal& signal, const MfccConfig& config) {
  if (!is_power_of_two(config.frame_length))
    raise_contract("mfcc: frame length " + std::to_string(config.frame_length) +
                   " is not a power of two");
  auto frames = frame_signal(signal, config.frame_length);
  const auto window = hann_window(config.frame_length);
  const auto fb = build_mel_filterbank(config.n_mels, config.n_bins(),
                                       signal.sample_rate, config.fmin_hz,
                                       config.fmax_hz);
  MfccFeatures raw;
  raw.n_coeffs = config.n_coeffs;
  raw.n_frames = static_cast<int>(frames.size());
  raw.data.assign(
      static_cast<size_t>(raw.n_coeffs) * static_cast<size_t>(raw.n_frames),
      0.0);
  for (size_t f = 0; f < frames.size(); ++f) {
    auto& frame = frames[f];
    for (size_t i = 0; i < frame.size(); ++i) frame[i] *= window[i];
    const auto power = power_spectrum(frame);
    const auto logmel = log_mel_energies(power, fb, config.log_floor);
    const auto coeffs = dct2_orthonormal(logmel, config.n_coeffs);
    for (int c = 0; c < raw.n_coeffs; ++c)
      raw.data[static_cast<size_t>(c) * static_cast<size_t>(raw.n_frames) + f] =
          coeffs[static_cast<size_t>(c)];
  }
  return fix_length(raw, config.target_frames, config.clip);
}

}  // namespace fino
