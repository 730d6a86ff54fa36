#include "meunet/sampler.hpp"

#include <cmath>

namespace meunet {

PatchPlan PatchPlan::desk(std::size_t levels, double k) {
  PatchPlan p;
  p.P = 32;
  p.stride = 16;
  p.k = k;
  p.E = expanded_edge(p.P, k, levels);
  return p;
}

PatchPlan PatchPlan::paper(std::size_t levels, double k) {
  PatchPlan p;
  p.P = 160;
  p.stride = 80;
  p.k = k;
  p.E = expanded_edge(p.P, k, levels);
  return p;
}

void PatchPlan::validate(std::size_t levels) const {
  const std::size_t div = std::size_t{1} << (levels - 1);
  if (P == 0 || P % div != 0) {
    throw ConfigError("patch plan: P=" + std::to_string(P) + " not a positive multiple of " + std::to_string(div));
  }
  if (stride == 0 || stride > P) throw ConfigError("patch plan: stride must be in [1, P]");
  if (!(k >= 1.0)) throw ConfigError("patch plan: expansion factor k must be >= 1");
  if (E < P || E % div != 0) {
    throw ConfigError("patch plan: E=" + std::to_string(E) + " must be >= P and a multiple of " + std::to_string(div));
  }
  if ((E - P) % 2 != 0) throw ConfigError("patch plan: E - P must be even");
  if (!(fg_threshold >= 0 && fg_threshold <= 1)) throw ConfigError("patch plan: fg_threshold outside [0, 1]");
  if (!(bg_accept_prob >= 0 && bg_accept_prob <= 1)) throw ConfigError("patch plan: bg_accept_prob outside [0, 1]");
}

std::size_t expanded_edge(std::size_t P, double k, std::size_t levels) {
  const std::size_t div = std::size_t{1} << (levels - 1);
  const auto raw = static_cast<std::size_t>(std::llround(k * static_cast<double>(P)));
  return (raw + div - 1) / div * div;
}

std::vector<std::size_t> tile_positions(std::size_t extent, std::size_t P, std::size_t stride) {
  if (P == 0 || stride == 0 || stride > P) throw ConfigError("tile_positions: need P >= 1 and 1 <= stride <= P");
  std::vector<std::size_t> out{0};
  if (extent <= P) return out;
  const std::size_t steps = (extent - P + stride - 1) / stride;
  for (std::size_t i = 1; i <= steps; ++i) out.push_back(i * stride);
  return out;
}

std::vector<Dims> tile_origins(const Dims& dims, std::size_t P, std::size_t stride) {
  std::vector<Dims> out;
  const auto zs = tile_positions(dims[0], P, stride), ys = tile_positions(dims[1], P, stride),
             xs = tile_positions(dims[2], P, stride);
  for (auto z : zs)
    for (auto y : ys)
      for (auto x : xs) out.push_back({z, y, x});
  return out;
}

double foreground_fraction(const LabelVolume& labels) {
  if (labels.values.empty()) return 0.0;
  std::size_t fg = 0;
  for (auto v : labels.values) fg += v != 0;
  return static_cast<double>(fg) / static_cast<double>(labels.values.size());
}

bool accept_fraction(double fraction, const PatchPlan& plan, double draw) {
  if (fraction >= plan.fg_threshold) return true;
  return draw < plan.bg_accept_prob;
}

bool accept_patch(const LabelVolume& label_patch, const PatchPlan& plan, Rng& rng) {
  const double f = foreground_fraction(label_patch);
  if (f >= plan.fg_threshold) return true;
  return accept_fraction(f, plan, rng.uniform());
}

namespace {

std::array<std::int64_t, 3> signed_origin(const Dims& o, std::int64_t shift) {
  return {static_cast<std::int64_t>(o[0]) - shift, static_cast<std::int64_t>(o[1]) - shift,
          static_cast<std::int64_t>(o[2]) - shift};
}

}  // namespace

ExpandedPatch expand_patch(const Volume& image, const LabelVolume& labels, const Dims& origin, std::size_t P,
                           std::size_t E) {
  if (E < P || (E - P) % 2 != 0) throw ConfigError("expand_patch: need E >= P with E - P even");
  const auto o = signed_origin(origin, static_cast<std::int64_t>((E - P) / 2));
  return {crop_padded(image, o, E, 0.0f), crop_padded(labels, o, E, std::uint8_t{0})};
}

PatchRecord extract_patch(const std::string& id, const Volume& image, const LabelVolume& labels, const Dims& origin,
                          const PatchPlan& plan, bool expanded) {
  PatchRecord r;
  r.volume_id = id;
  r.origin = origin;
  const auto o = signed_origin(origin, 0);
  r.image = crop_padded(image, o, plan.P, 0.0f);
  r.labels = crop_padded(labels, o, plan.P, std::uint8_t{0});
  if (expanded) {
    auto e = expand_patch(image, labels, origin, plan.P, plan.E);
    r.expanded_image = std::move(e.image);
    r.expanded_labels = std::move(e.labels);
  }
  return r;
}

Tensor to_input(const Volume& v) {
  std::vector<double> d(v.values.begin(), v.values.end());
  return Tensor({1, v.channels, v.dims[0], v.dims[1], v.dims[2]}, std::move(d));
}

LabelTensor to_label_tensor(const LabelVolume& v) {
  if (v.channels != 1) throw ShapeError("to_label_tensor: label volumes have one channel");
  return LabelTensor({1, v.dims[0], v.dims[1], v.dims[2]}, v.values);
}

SupervisionTargets supervision_targets(const PatchRecord& record, std::size_t levels, std::size_t classes) {
  (void)levels;
  SupervisionTargets t;
  t.standard_labels = to_label_tensor(record.labels);
  t.standard_one_hot = one_hot(t.standard_labels, classes);
  if (record.expanded_labels) {
    t.expanded_labels = downsample_labels_nearest(to_label_tensor(*record.expanded_labels), 2);
    t.expanded_one_hot = one_hot(t.expanded_labels, classes);
  }
  return t;
}

std::vector<PatchRecord> sample_patches(const std::string& id, const Volume& image, const LabelVolume& labels,
                                        const PatchPlan& plan, bool expanded, Rng& rng) {
  std::vector<PatchRecord> out;
  for (const auto& origin : tile_origins(labels.dims, plan.P, plan.stride)) {
    auto lab = crop_padded(labels, signed_origin(origin, 0), plan.P, std::uint8_t{0});
    if (!accept_patch(lab, plan, rng)) continue;
    out.push_back(extract_patch(id, image, labels, origin, plan, expanded));
  }
  return out;
}

void augment_with(Volume& image, LabelVolume& labels, int quarter_turns, double scale) {
  quarter_turns = ((quarter_turns % 4) + 4) % 4;
  if (quarter_turns == 0 && scale == 1.0) return;
  if (!same_geometry(image, labels)) throw ShapeError("augment: image and labels differ in shape");
  const Dims d = image.dims;
  const double cz = (d[0] - 1) / 2.0, cy = (d[1] - 1) / 2.0, cx = (d[2] - 1) / 2.0;
  Volume img(d, image.channels);
  img.spacing_um = image.spacing_um;
  LabelVolume lab(d, 1);
  lab.spacing_um = labels.spacing_um;
  auto inside = [](double c, std::size_t n) { return c > -0.5 && c < static_cast<double>(n) - 0.5; };
  for (std::size_t z = 0; z < d[0]; ++z)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t x = 0; x < d[2]; ++x) {
        double dy = y - cy, dx = x - cx;
        // Inverse rotation, one quarter turn at a time: (dy, dx) <- (dx, -dy).
        for (int q = 0; q < quarter_turns; ++q) {
          const double t = dy;
          dy = dx;
          dx = -t;
        }
        const double sz = cz + (z - cz) / scale, sy = cy + dy / scale, sx = cx + dx / scale;
        if (inside(sz, d[0]) && inside(sy, d[1]) && inside(sx, d[2])) {
          const auto nz = static_cast<std::size_t>(std::lround(sz)), ny = static_cast<std::size_t>(std::lround(sy)),
                     nx = static_cast<std::size_t>(std::lround(sx));
          lab.at(z, y, x) = labels.at(std::min(nz, d[0] - 1), std::min(ny, d[1] - 1), std::min(nx, d[2] - 1));
        }
        const double fz = std::floor(sz), fy = std::floor(sy), fx = std::floor(sx);
        for (std::size_t c = 0; c < image.channels; ++c) {
          double acc = 0;
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
              for (int e = 0; e < 2; ++e) {
                const double iz = fz + a, iy = fy + b, ix = fx + e;
                const double w = (a ? sz - fz : 1 - (sz - fz)) * (b ? sy - fy : 1 - (sy - fy)) *
                                 (e ? sx - fx : 1 - (sx - fx));
                if (w == 0 || iz < 0 || iy < 0 || ix < 0 || iz >= d[0] || iy >= d[1] || ix >= d[2]) continue;
                acc += w * image.values[image.index(c, static_cast<std::size_t>(iz), static_cast<std::size_t>(iy),
                                                    static_cast<std::size_t>(ix))];
              }
          img.values[img.index(c, z, y, x)] = static_cast<float>(acc);
        }
      }
  image = std::move(img);
  labels = std::move(lab);
}

void augment(Volume& image, LabelVolume& labels, Rng& rng) {
  const int q = static_cast<int>(rng.below(4));
  const double s = rng.uniform(0.9, 1.1);
  augment_with(image, labels, q, s);
}

}  // namespace meunet
