// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#pragma once

// Colorizers (oracle, palette, external subprocess), ab histograms and histogram-guided purification.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "colornerf/color_space.hpp"
#include "colornerf/errors.hpp"
#include "colornerf/rendering.hpp"
#include "colornerf/scene.hpp"

extern char** environ;

namespace colornerf::colorize {

inline constexpr double kAbLimit = 128.0;

/// Per-pixel chroma for a patch, row-major, (a, b) interleaved.
struct AbPatch {
  int width = 0;
  int height = 0;
  std::vector<double> ab;
  std::string provenance;

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  color::AbPoint at(std::size_t i) const { return {ab[2 * i], ab[2 * i + 1]}; }
};

/// What a colorizer sees: the rendered luminance patch, plus where it came from so the
/// oracle can look up ground truth.
struct PatchQuery {
  int width = 0;
  int height = 0;
  std::span<const double> L;  // [0, 1], row-major
  int view = -1;
  std::span<const std::array<double, 2>> pixels;  // continuous pixel coordinates, row-major
  int index = 0;                                  // query counter, for provenance
};

class Colorizer {
public:
  virtual ~Colorizer() = default;
  /// Throws ColorizerError when this query fails; ColorizerUnavailable when no further
  /// query can succeed.
  virtual AbPatch colorize(const PatchQuery& query) = 0;
  virtual std::string name() const = 0;
};

/// Ground-truth ab (bilinear at the query's pixel coordinates) plus fresh zero-mean
/// Gaussian noise per query, pixel and channel.
class OracleColorizer final : public Colorizer {
public:
  OracleColorizer(std::shared_ptr<const scene::MultiViewDataset> dataset, double noise_sigma, std::uint64_t seed)
      : dataset_(std::move(dataset)), noise_sigma_(noise_sigma), rng_(seed) {
    if (!dataset_) throw std::invalid_argument("OracleColorizer: needs a dataset");
    if (noise_sigma < 0.0) throw std::invalid_argument("OracleColorizer: negative noise");
  }

  AbPatch colorize(const PatchQuery& q) override {
    if (q.view < 0 || q.view >= static_cast<int>(dataset_->views.size()))
      throw ColorizerError("oracle colorizer: query has no valid view index");
    if (q.pixels.size() != static_cast<std::size_t>(q.width) * q.height)
      throw ColorizerError("oracle colorizer: query lacks pixel coordinates");
    const auto& ab = dataset_->views[static_cast<std::size_t>(q.view)].ab;
    AbPatch out{q.width, q.height, std::vector<double>(2 * q.pixels.size()), "oracle#" + std::to_string(q.index)};
    std::lock_guard lock(mutex_);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < q.pixels.size(); ++i) {
      for (int c = 0; c < 2; ++c) {
        double v = ab.bilinear(q.pixels[i][0], q.pixels[i][1], c);
        if (noise_sigma_ > 0.0) v += noise_sigma_ * noise(rng_);
        out.ab[2 * i + static_cast<std::size_t>(c)] = std::clamp(v, -kAbLimit, kAbLimit);
      }
    }
    return out;
  }

  std::string name() const override { return "oracle"; }

private:
  std::shared_ptr<const scene::MultiViewDataset> dataset_;
  double noise_sigma_;
  std::mt19937_64 rng_;
  std::mutex mutex_;
};

using PaletteCurve = std::function<color::AbPoint(double L)>;

/// a = 40 (L - 0.5), b = 20.
inline color::AbPoint default_palette_curve(double L) { return {40.0 * (L - 0.5), 20.0}; }

inline PaletteCurve constant_curve(color::AbPoint ab) {
  return [ab](double) { return ab; };
}

/// Deterministic per-pixel lookup ab = curve(L).
class PaletteColorizer final : public Colorizer {
public:
  explicit PaletteColorizer(PaletteCurve curve = default_palette_curve) : curve_(std::move(curve)) {}

  AbPatch colorize(const PatchQuery& q) override {
    AbPatch out{q.width, q.height, std::vector<double>(2 * q.L.size()), "palette#" + std::to_string(q.index)};
    for (std::size_t i = 0; i < q.L.size(); ++i) {
      const auto ab = curve_(q.L[i]);
      out.ab[2 * i] = std::clamp(ab.a, -kAbLimit, kAbLimit);
      out.ab[2 * i + 1] = std::clamp(ab.b, -kAbLimit, kAbLimit);
    }
    return out;
  }

  std::string name() const override { return "palette"; }

private:
  PaletteCurve curve_;
};

// ---------------------------------------------------------------------------------------------
// Subprocess wire format (little-endian):
//   request  "CLRQ" u32 width u32 height, width*height f32 L
//   response "CLRA" u32 width u32 height, width*height (f32 a, f32 b)

namespace protocol {

inline constexpr std::size_t kHeaderSize = 12;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline std::uint32_t get_u32(std::string_view in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}
inline float get_f32(std::string_view in, std::size_t pos) { return std::bit_cast<float>(get_u32(in, pos)); }

struct Header {
  std::string magic;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
};

inline Header decode_header(std::string_view bytes) {
  if (bytes.size() < kHeaderSize) throw ProtocolError("truncated header");
  return {std::string(bytes.substr(0, 4)), get_u32(bytes, 4), get_u32(bytes, 8)};
}

inline std::string encode_request(int width, int height, std::span<const double> L) {
  if (L.size() != static_cast<std::size_t>(width) * height) throw std::invalid_argument("encode_request: size mismatch");
  std::string out = "CLRQ";
  put_u32(out, static_cast<std::uint32_t>(width));
  put_u32(out, static_cast<std::uint32_t>(height));
  for (double v : L) put_f32(out, static_cast<float>(v));
  return out;
}

struct Request {
  int width = 0;
  int height = 0;
  std::vector<double> L;
};

inline Request decode_request(std::string_view bytes) {
  const auto h = decode_header(bytes);
  if (h.magic != "CLRQ") throw ProtocolError("bad request magic");
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  if (bytes.size() != kHeaderSize + 4 * n) throw ProtocolError("request payload size mismatch");
  Request r{static_cast<int>(h.width), static_cast<int>(h.height), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) r.L[i] = get_f32(bytes, kHeaderSize + 4 * i);
  return r;
}

inline std::string encode_response(int width, int height, std::span<const double> ab) {
  if (ab.size() != 2 * static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("encode_response: size mismatch");
  std::string out = "CLRA";
  put_u32(out, static_cast<std::uint32_t>(width));
  put_u32(out, static_cast<std::uint32_t>(height));
  for (double v : ab) put_f32(out, static_cast<float>(v));
  return out;
}

/// Validates magic, echoed dimensions, payload size and value range.
inline AbPatch decode_response(std::string_view bytes, int width, int height) {
  const auto h = decode_header(bytes);
  if (h.magic != "CLRA") throw ProtocolError("bad response magic");
  if (h.width != static_cast<std::uint32_t>(width) || h.height != static_cast<std::uint32_t>(height))
    throw ProtocolError("response dimensions do not echo the request");
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (bytes.size() != kHeaderSize + 8 * n) throw ProtocolError("response payload size mismatch");
  AbPatch out{width, height, std::vector<double>(2 * n), "external"};
  for (std::size_t i = 0; i < 2 * n; ++i) {
    const double v = get_f32(bytes, kHeaderSize + 4 * i);
    if (!(v >= -kAbLimit && v <= kAbLimit)) throw ProtocolError("response ab value out of range");
    out.ab[i] = v;
  }
  return out;
}

} // namespace protocol

/// Runs `/bin/sh -c command` and exchanges one request/response pair per query over its
/// stdin/stdout. A timeout or malformed answer fails the query and restarts the child;
/// a child that closes its output is reported as unavailable.
class ExternalColorizer final : public Colorizer {
public:
  ExternalColorizer(std::string command, std::chrono::milliseconds timeout)
      : command_(std::move(command)), timeout_(timeout) {
    // Writes to a dead child must surface as EPIPE, not terminate the process.
    ::signal(SIGPIPE, SIG_IGN);
    spawn();
  }
  ExternalColorizer(const ExternalColorizer&) = delete;
  ExternalColorizer& operator=(const ExternalColorizer&) = delete;
  ~ExternalColorizer() override { stop(); }

  AbPatch colorize(const PatchQuery& q) override {
    std::lock_guard lock(mutex_);
    if (pid_ <= 0) spawn();
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    try {
      write_all(protocol::encode_request(q.width, q.height, q.L), deadline);
      std::string bytes = read_exact(protocol::kHeaderSize, deadline);
      const auto h = protocol::decode_header(bytes);
      if (h.magic != "CLRA") throw ProtocolError("bad response magic from '" + command_ + "'");
      if (h.width != static_cast<std::uint32_t>(q.width) || h.height != static_cast<std::uint32_t>(q.height))
        throw ProtocolError("response dimensions do not echo the request");
      bytes += read_exact(8 * static_cast<std::size_t>(q.width) * q.height, deadline);
      auto patch = protocol::decode_response(bytes, q.width, q.height);
      patch.provenance = "external#" + std::to_string(q.index);
      return patch;
    } catch (const ColorizerError&) {
      stop();  // the stream may be out of sync; start fresh next time
      throw;
    } catch (const ColorizerUnavailable&) {
      stop();
      throw;
    }
  }

  std::string name() const override { return "external"; }

private:
  void spawn() {
    int in_pipe[2], out_pipe[2];
    if (::pipe(in_pipe) != 0) throw ColorizerUnavailable("pipe() failed");
    if (::pipe(out_pipe) != 0) {
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      throw ColorizerUnavailable("pipe() failed");
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) posix_spawn_file_actions_addclose(&actions, fd);
    std::string sh = "/bin/sh", flag = "-c";
    char* argv[] = {sh.data(), flag.data(), command_.data(), nullptr};
    // Own process group, so stop() also reaches anything the shell forked.
    posix_spawnattr_t attr;
    posix_spawnattr_init(&attr);
    posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
    posix_spawnattr_setpgroup(&attr, 0);
    pid_t pid = 0;
    const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, &attr, argv, environ);
    posix_spawn_file_actions_destroy(&actions);
    posix_spawnattr_destroy(&attr);
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    if (rc != 0) {
      ::close(in_pipe[1]);
      ::close(out_pipe[0]);
      throw ColorizerUnavailable("cannot start colorizer '" + command_ + "'");
    }
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    ::fcntl(to_child_, F_SETFL, ::fcntl(to_child_, F_GETFL) | O_NONBLOCK);
    ::fcntl(from_child_, F_SETFL, ::fcntl(from_child_, F_GETFL) | O_NONBLOCK);
  }

  void stop() {
    if (to_child_ >= 0) ::close(to_child_);
    if (from_child_ >= 0) ::close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
      int status = 0;
      // Give a well-behaved child a moment to exit on end-of-input.
      for (int i = 0; i < 50 && ::waitpid(pid_, &status, WNOHANG) == 0; ++i) ::usleep(2000);
      if (::waitpid(pid_, &status, WNOHANG) == 0) {
        ::kill(-pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
      } else {
        ::kill(-pid_, SIGKILL);
      }
    }
    pid_ = -1;
  }

  int wait_ready(int fd, short events, std::chrono::steady_clock::time_point deadline) const {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw ColorizerError("colorizer timed out after " + std::to_string(timeout_.count()) + " ms");
    pollfd p{fd, events, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
    if (rc == 0) throw ColorizerError("colorizer timed out after " + std::to_string(timeout_.count()) + " ms");
    return rc;
  }

  void write_all(const std::string& bytes, std::chrono::steady_clock::time_point deadline) {
    std::size_t done = 0;
    while (done < bytes.size()) {
      wait_ready(to_child_, POLLOUT, deadline);
      const ssize_t n = ::write(to_child_, bytes.data() + done, bytes.size() - done);
      if (n < 0) {
        if (errno == EAGAIN || errno == EINTR) continue;
        throw ColorizerUnavailable("colorizer closed its input");
      }
      done += static_cast<std::size_t>(n);
    }
  }

  std::string read_exact(std::size_t count, std::chrono::steady_clock::time_point deadline) {
    std::string out(count, '\0');
    std::size_t done = 0;
    while (done < count) {
      wait_ready(from_child_, POLLIN, deadline);
      const ssize_t n = ::read(from_child_, out.data() + done, count - done);
      if (n < 0) {
        if (errno == EAGAIN || errno == EINTR) continue;
        throw ColorizerUnavailable("read from colorizer failed");
      }
      if (n == 0) throw ColorizerUnavailable("colorizer exited (end of output)");
      done += static_cast<std::size_t>(n);
    }
    return out;
  }

  std::string command_;
  std::chrono::milliseconds timeout_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::mutex mutex_;
};

// ---------------------------------------------------------------------------------------------

inline constexpr double kHistRange = 110.0;

/// Normalized B x B histogram over the ab square [-110, 110]^2.
class Histogram2D {
public:
  Histogram2D(int bins, std::vector<double> counts) : bins_(bins), mass_(std::move(counts)) {
    if (bins_ < 2 || mass_.size() != static_cast<std::size_t>(bins_) * bins_)
      throw std::invalid_argument("Histogram2D: bad shape");
    double total = 0.0;
    for (double v : mass_) {
      if (v < 0.0) throw std::invalid_argument("Histogram2D: negative count");
      total += v;
    }
    if (!(total > 0.0)) throw std::invalid_argument("Histogram2D: empty histogram");
    for (double& v : mass_) v /= total;
  }

  int bins() const { return bins_; }
  std::span<const double> mass() const { return mass_; }

private:
  int bins_;
  std::vector<double> mass_;
};

inline int hist_bin(double v, int bins) {
  const int i = static_cast<int>(std::floor((v + kHistRange) / (2.0 * kHistRange) * bins));
  return std::clamp(i, 0, bins - 1);
}

inline Histogram2D ab_histogram(const AbPatch& patch, int bins = 32) {
  if (bins < 2) throw std::invalid_argument("ab_histogram: need at least 2 bins");
  std::vector<double> counts(static_cast<std::size_t>(bins) * bins, 0.0);
  for (std::size_t i = 0; i < patch.pixel_count(); ++i) {
    const auto ab = patch.at(i);
    counts[static_cast<std::size_t>(hist_bin(ab.a, bins) * bins + hist_bin(ab.b, bins))] += 1.0;
  }
  return Histogram2D(bins, std::move(counts));
}

/// Cosine similarity of the bin vectors; in [0, 1] for nonnegative histograms.
inline double hist_similarity(const Histogram2D& h1, const Histogram2D& h2) {
  if (h1.bins() != h2.bins()) throw std::invalid_argument("hist_similarity: bin count mismatch");
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  const auto a = h1.mass(), b = h2.mass();
  for (std::size_t j = 0; j < a.size(); ++j) {
    dot += a[j] * b[j];
    n1 += a[j] * a[j];
    n2 += b[j] * b[j];
  }
  if (!(n1 > 0.0) || !(n2 > 0.0)) throw std::invalid_argument("hist_similarity: zero-norm histogram");
  return std::clamp(dot / std::sqrt(n1 * n2), 0.0, 1.0);
}

struct BaseSet {
  std::vector<AbPatch> patches;
  std::vector<Histogram2D> histograms;
  double threshold = 0.80;
  int bins = 32;

  void validate() const {
    if (histograms.empty()) throw std::invalid_argument("BaseSet: empty");
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("BaseSet: threshold must be in (0, 1)");
  }
};

inline double max_similarity(const Histogram2D& h, const BaseSet& base) {
  double best = 0.0;
  for (const auto& b : base.histograms) best = std::max(best, hist_similarity(h, b));
  return best;
}

/// Keeps the patch iff its best similarity to a base histogram strictly exceeds the threshold.
inline bool passes_purification(double max_sim, double threshold) { return max_sim > threshold; }

inline std::optional<AbPatch> purify(AbPatch patch, const BaseSet& base) {
  base.validate();
  if (!passes_purification(max_similarity(ab_histogram(patch, base.bins), base), base.threshold)) return std::nullopt;
  return patch;
}

/// Uniformly placed patch center for scale s; throws if the patch cannot fit.
template <std::uniform_random_bit_generator Rng>
render::PatchSpec random_patch(const render::Camera& cam, int K, double s, Rng& rng) {
  const auto xr = render::patch_center_range(cam.width, s, K);
  const auto yr = render::patch_center_range(cam.height, s, K);
  if (xr[0] > xr[1] || yr[0] > yr[1]) throw std::invalid_argument("patch does not fit in the image at this scale");
  std::uniform_real_distribution<double> ux(xr[0], xr[1]), uy(yr[0], yr[1]);
  render::PatchSpec spec;
  spec.K = K;
  spec.s = s;
  spec.u = ux(rng);
  spec.v = uy(rng);
  return spec;
}

struct BaseSetConfig {
  int count = 5;
  double scale = 0.7;
  double threshold = 0.80;
  int bins = 32;
  int K = 32;
  int max_attempts_per_patch = 8;
};

/// Renders `count` luminance patches at the base scale from random views, colorizes each
/// once and stores them with their histograms. A failed query draws a different patch.
template <std::uniform_random_bit_generator Rng>
BaseSet build_base_set(const field::FieldParams& f, Colorizer& colorizer, const scene::MultiViewDataset& ds,
                       const BaseSetConfig& cfg, const render::RenderOptions& render_opt, Rng& rng, int workers = 1) {
  if (cfg.count < 1) throw std::invalid_argument("build_base_set: count must be >= 1");
  if (ds.views.empty()) throw std::invalid_argument("build_base_set: dataset has no views");
  BaseSet base;
  base.threshold = cfg.threshold;
  base.bins = cfg.bins;
  auto opt = render_opt;
  opt.luminance = true;
  opt.color = false;
  std::uniform_int_distribution<int> pick(0, static_cast<int>(ds.views.size()) - 1);
  int query = 0;
  for (int i = 0; i < cfg.count; ++i) {
    for (int attempt = 0;; ++attempt) {
      const int view = pick(rng);
      const auto& cam = ds.views[static_cast<std::size_t>(view)].camera;
      const auto rays = render::sample_patch_rays(cam, random_patch(cam, cfg.K, cfg.scale, rng), f.bbox);
      const auto rendered = render::render_patch(f, rays, opt, rng, workers);
      try {
        auto patch = colorizer.colorize({cfg.K, cfg.K, rendered.L, view, rays.pixels, query++});
        base.histograms.push_back(ab_histogram(patch, cfg.bins));
        base.patches.push_back(std::move(patch));
        break;
      } catch (const ColorizerError&) {
        if (attempt + 1 >= cfg.max_attempts_per_patch)
          throw ColorizerUnavailable("could not colorize a base patch after " + std::to_string(attempt + 1) +
                                     " attempts");
      }
    }
  }
  return base;
}

} // namespace colornerf::colorize
