#include "melfront/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <unsupported/Eigen/FFT>

namespace melfront {

namespace {

std::uint32_t rd_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t rd_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filterbank over the magnitude spectrum bins, HTK mel scale,
// spanning 0 Hz to Nyquist.
Eigen::MatrixXf mel_filterbank(int n_mels, int n_bins, int n_fft, int sample_rate) {
    const double f_min = 0.0;
    const double f_max = sample_rate / 2.0;
    const double m_min = hz_to_mel(f_min);
    const double m_max = hz_to_mel(f_max);

    std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
    for (int i = 0; i < n_mels + 2; ++i) {
        edges[static_cast<std::size_t>(i)] =
            mel_to_hz(m_min + (m_max - m_min) * i / (n_mels + 1));
    }

    Eigen::MatrixXf fb = Eigen::MatrixXf::Zero(n_mels, n_bins);
    for (int m = 0; m < n_mels; ++m) {
        const double f0 = edges[static_cast<std::size_t>(m)];
        const double f1 = edges[static_cast<std::size_t>(m) + 1];
        const double f2 = edges[static_cast<std::size_t>(m) + 2];
        for (int k = 0; k < n_bins; ++k) {
            const double fk = static_cast<double>(sample_rate) * k / n_fft;
            double w = 0.0;
            if (fk > f0 && fk < f1) {
                w = (fk - f0) / (f1 - f0);
            } else if (fk >= f1 && fk < f2) {
                w = (f2 - fk) / (f2 - f1);
            }
            fb(m, k) = static_cast<float>(w);
        }
    }
    return fb;
}

}  // namespace

std::vector<float> load_wav(const std::string& path, int expected_rate) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("wav: cannot open: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 44) throw std::runtime_error("wav: truncated file (no header): " + path);
    if (std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw std::runtime_error("wav: not a RIFF/WAVE file: " + path);
    }

    std::size_t pos = 12;
    int channels = -1, rate = -1, bits = -1;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t chunk_len = rd_u32(bytes.data() + pos + 4);
        const unsigned char* body = bytes.data() + pos + 8;
        if (pos + 8 + chunk_len > bytes.size()) {
            throw std::runtime_error("wav: truncated chunk in " + path);
        }
        if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
            if (chunk_len < 16) throw std::runtime_error("wav: short fmt chunk in " + path);
            const std::uint16_t format = rd_u16(body);
            if (format != 1) {
                throw std::runtime_error("wav: format must be PCM (field wFormatTag), got " +
                                         std::to_string(format));
            }
            channels = rd_u16(body + 2);
            rate = static_cast<int>(rd_u32(body + 4));
            bits = rd_u16(body + 14);
        } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
            data = body;
            data_len = chunk_len;
        }
        pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
    }

    if (channels < 0) throw std::runtime_error("wav: missing fmt chunk in " + path);
    if (channels != 1) {
        throw std::runtime_error("wav: channels must be 1 (field nChannels), got " +
                                 std::to_string(channels));
    }
    if (rate != expected_rate) {
        throw std::runtime_error("wav: sample rate must be " + std::to_string(expected_rate) +
                                 " (field nSamplesPerSec), got " + std::to_string(rate));
    }
    if (bits != 16) {
        throw std::runtime_error("wav: bit depth must be 16 (field wBitsPerSample), got " +
                                 std::to_string(bits));
    }
    if (data == nullptr) throw std::runtime_error("wav: missing data chunk in " + path);

    std::vector<float> samples(data_len / 2);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::int16_t s = static_cast<std::int16_t>(rd_u16(data + 2 * i));
        samples[i] = static_cast<float>(s) / 32768.0f;
    }
    return samples;
}

void save_wav(const std::string& path, const std::vector<float>& samples, int sample_rate) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("wav: cannot open for writing: " + path);
    auto wr_u32 = [&os](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
        os.write(reinterpret_cast<const char*>(b), 4);
    };
    auto wr_u16 = [&os](std::uint16_t v) {
        unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff)};
        os.write(reinterpret_cast<const char*>(b), 2);
    };
    const std::uint32_t data_len = static_cast<std::uint32_t>(samples.size() * 2);
    os.write("RIFF", 4);
    wr_u32(36 + data_len);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    wr_u32(16);
    wr_u16(1);  // PCM
    wr_u16(1);  // mono
    wr_u32(static_cast<std::uint32_t>(sample_rate));
    wr_u32(static_cast<std::uint32_t>(sample_rate * 2));
    wr_u16(2);
    wr_u16(16);
    os.write("data", 4);
    wr_u32(data_len);
    for (float s : samples) {
        const float c = std::clamp(s, -1.0f, 1.0f);
        const std::int16_t q = static_cast<std::int16_t>(std::lrintf(c * 32767.0f));
        wr_u16(static_cast<std::uint16_t>(q));
    }
}

MelGrid extract_logmel(const std::vector<float>& waveform, const AudioConfig& cfg) {
    if (cfg.window_length != 6 * cfg.hop) {
        throw std::invalid_argument("audio config: window_length must be 6 x hop");
    }
    if (static_cast<int>(waveform.size()) < cfg.window_length) {
        throw std::invalid_argument("extract_logmel: waveform shorter than one analysis window");
    }

    const int n_fft = cfg.window_length;
    const int n_bins = n_fft / 2 + 1;
    const int n_frames =
        1 + (static_cast<int>(waveform.size()) - cfg.window_length) / cfg.hop;

    std::vector<float> window(static_cast<std::size_t>(n_fft));
    for (int i = 0; i < n_fft; ++i) {
        window[static_cast<std::size_t>(i)] =
            0.5f - 0.5f * std::cos(2.0f * static_cast<float>(M_PI) * i / n_fft);
    }

    Eigen::FFT<float> fft;
    Eigen::MatrixXf magnitude(n_bins, n_frames);
    std::vector<float> frame(static_cast<std::size_t>(n_fft));
    std::vector<std::complex<float>> spectrum;
    for (int t = 0; t < n_frames; ++t) {
        const float* src = waveform.data() + static_cast<std::size_t>(t) * cfg.hop;
        for (int i = 0; i < n_fft; ++i) {
            frame[static_cast<std::size_t>(i)] = src[i] * window[static_cast<std::size_t>(i)];
        }
        fft.fwd(spectrum, frame);
        for (int k = 0; k < n_bins; ++k) {
            magnitude(k, t) = std::abs(spectrum[static_cast<std::size_t>(k)]);
        }
    }

    const Eigen::MatrixXf fb = mel_filterbank(cfg.n_mels, n_bins, n_fft, cfg.sample_rate);
    const Eigen::MatrixXf mel = fb * magnitude;  // (n_mels x n_frames)

    MelGrid grid(cfg.target_frames, cfg.n_mels, GridResolution::full, false);
    const float pad_value = std::log(kLogFloor);
    for (int t = 0; t < cfg.target_frames; ++t) {
        for (int f = 0; f < cfg.n_mels; ++f) {
            grid.at(t, f) = (t < n_frames) ? std::log(mel(f, t) + kLogFloor) : pad_value;
        }
    }
    return grid;
}

MelGrid downsample_tier1(const MelGrid& mel) {
    if (mel.resolution != GridResolution::full || mel.frames != 448 || mel.bins != 256) {
        throw std::invalid_argument("downsample_tier1: expects a full (448, 256) grid");
    }
    MelGrid out(mel.frames / 4, mel.bins / 8, GridResolution::tier1, mel.normalized);
    for (int t = 0; t < out.frames; ++t) {
        for (int f = 0; f < out.bins; ++f) {
            out.at(t, f) = mel.at(4 * t, 8 * f);
        }
    }
    return out;
}

NormStats compute_norm_stats(const std::vector<MelGrid>& grids) {
    if (grids.empty()) {
        throw std::invalid_argument("compute_norm_stats: empty grid collection");
    }
    const int bins = grids[0].bins;
    for (const MelGrid& g : grids) {
        if (g.resolution != GridResolution::tier1) {
            throw std::invalid_argument("compute_norm_stats: all grids must be tier1");
        }
        if (g.bins != bins) {
            throw std::invalid_argument("compute_norm_stats: inconsistent bin counts");
        }
    }

    // Accumulate in grid order so the reduction is deterministic.
    std::vector<double> sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> sum_sq(static_cast<std::size_t>(bins), 0.0);
    std::size_t n_frames = 0;
    for (const MelGrid& g : grids) {
        for (int t = 0; t < g.frames; ++t) {
            for (int f = 0; f < bins; ++f) {
                const double v = g.at(t, f);
                sum[static_cast<std::size_t>(f)] += v;
                sum_sq[static_cast<std::size_t>(f)] += v * v;
            }
        }
        n_frames += static_cast<std::size_t>(g.frames);
    }

    NormStats stats;
    stats.mean.resize(static_cast<std::size_t>(bins));
    stats.std_dev.resize(static_cast<std::size_t>(bins));
    for (int f = 0; f < bins; ++f) {
        const double mean = sum[static_cast<std::size_t>(f)] / static_cast<double>(n_frames);
        const double var =
            sum_sq[static_cast<std::size_t>(f)] / static_cast<double>(n_frames) - mean * mean;
        stats.mean[static_cast<std::size_t>(f)] = static_cast<float>(mean);
        stats.std_dev[static_cast<std::size_t>(f)] =
            std::max(1e-5f, static_cast<float>(std::sqrt(std::max(0.0, var))));
    }

    bool first = true;
    for (const MelGrid& g : grids) {
        for (int t = 0; t < g.frames; ++t) {
            for (int f = 0; f < bins; ++f) {
                const float z = (g.at(t, f) - stats.mean[static_cast<std::size_t>(f)]) /
                                stats.std_dev[static_cast<std::size_t>(f)];
                if (first) {
                    stats.data_min = stats.data_max = z;
                    first = false;
                } else {
                    stats.data_min = std::min(stats.data_min, z);
                    stats.data_max = std::max(stats.data_max, z);
                }
            }
        }
    }
    if (!(stats.data_min < stats.data_max)) {
        // constant corpus: widen so the invariant data_min < data_max holds
        stats.data_min -= 1.0f;
        stats.data_max += 1.0f;
    }
    return stats;
}

MelGrid normalize(const MelGrid& mel, const NormStats& stats) {
    if (mel.normalized) throw std::invalid_argument("normalize: grid is already normalized");
    if (static_cast<std::size_t>(mel.bins) != stats.mean.size()) {
        throw std::invalid_argument("normalize: bin count does not match stats");
    }
    MelGrid out = mel;
    out.normalized = true;
    for (int t = 0; t < mel.frames; ++t) {
        for (int f = 0; f < mel.bins; ++f) {
            out.at(t, f) = (mel.at(t, f) - stats.mean[static_cast<std::size_t>(f)]) /
                           stats.std_dev[static_cast<std::size_t>(f)];
        }
    }
    return out;
}

MelGrid denormalize(const MelGrid& mel, const NormStats& stats) {
    if (!mel.normalized) throw std::invalid_argument("denormalize: grid is not normalized");
    if (static_cast<std::size_t>(mel.bins) != stats.mean.size()) {
        throw std::invalid_argument("denormalize: bin count does not match stats");
    }
    MelGrid out = mel;
    out.normalized = false;
    for (int t = 0; t < mel.frames; ++t) {
        for (int f = 0; f < mel.bins; ++f) {
            out.at(t, f) = mel.at(t, f) * stats.std_dev[static_cast<std::size_t>(f)] +
                           stats.mean[static_cast<std::size_t>(f)];
        }
    }
    return out;
}

MelGrid interpolate_time(const MelGrid& mel, int factor) {
    if (mel.resolution != GridResolution::tier1) {
        throw std::invalid_argument("interpolate_time: expects a tier1 grid");
    }
    if (factor < 1) throw std::invalid_argument("interpolate_time: factor must be >= 1");
    MelGrid out(mel.frames * factor, mel.bins, GridResolution::vocoder, mel.normalized);
    for (int t = 0; t < out.frames; ++t) {
        const int knot = t / factor;
        const int frac = t % factor;
        for (int f = 0; f < mel.bins; ++f) {
            if (frac == 0 || knot + 1 >= mel.frames) {
                out.at(t, f) = mel.at(std::min(knot, mel.frames - 1), f);
            } else {
                const float a = mel.at(knot, f);
                const float b = mel.at(knot + 1, f);
                out.at(t, f) = a + (b - a) * static_cast<float>(frac) / static_cast<float>(factor);
            }
        }
    }
    return out;
}

}  // namespace melfront
