#include "kneeatt/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace kneeatt {

std::string to_string(Side s) { return s == Side::Left ? "left" : "right"; }

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: return "none";
  }
  return "?";
}

Side parse_side(const std::string& s) {
  if (s == "left") return Side::Left;
  if (s == "right") return Side::Right;
  throw std::invalid_argument("unknown side '" + s + "'");
}

Split parse_split(const std::string& s) {
  for (Split v : {Split::Train, Split::Val, Split::Test, Split::Unassigned})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

std::size_t DatasetManifest::total() const {
  return std::accumulate(counts_per_grade.begin(), counts_per_grade.end(), std::size_t{0});
}

std::vector<std::string> DatasetManifest::problems() const {
  std::vector<std::string> out;
  if (counts_per_grade.size() != kGrades) {
    out.push_back("data: counts_per_grade needs " + std::to_string(kGrades) + " entries");
  }
  if (total() == 0) out.push_back("data: counts_per_grade sums to zero");
  if (image_h < 8 || image_w < 8) out.push_back("data: image size must be at least 8x8");
  if (raw_h < 16 || raw_w < 16) out.push_back("data: raw knee size must be at least 16x16");
  const double fsum = fractions.train + fractions.val + fractions.test;
  if (std::abs(fsum - 1.0) > 1e-9) out.push_back("data: split fractions sum to " + std::to_string(fsum) + ", not 1");
  if (fractions.train <= 0.0 || fractions.val < 0.0 || fractions.test < 0.0) {
    out.push_back("data: split fractions must be non-negative with a positive train share");
  }
  std::size_t splits = 1 + (fractions.val > 0.0) + (fractions.test > 0.0);
  for (std::size_t g = 0; g < counts_per_grade.size(); ++g) {
    const std::size_t n = counts_per_grade[g];
    if (n > 0 && n < splits) {
      out.push_back("data: grade " + std::to_string(g) + " has " + std::to_string(n) + " samples, fewer than the " +
                    std::to_string(splits) + " splits");
    }
  }
  return out;
}

void DatasetManifest::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::ostringstream os;
  for (std::size_t i = 0; i < p.size(); ++i) os << (i ? "\n" : "") << p[i];
  throw std::invalid_argument(os.str());
}

double nominal_gap_height(int grade, std::size_t h) {
  static constexpr std::array<double, kGrades> kRawGap{15.0, 12.0, 9.0, 6.0, 3.0};
  return kRawGap.at(static_cast<std::size_t>(grade)) * static_cast<double>(h) / 96.0;
}

namespace {

void draw_disc(Tensor& img, double cy, double cx, double r, double value) {
  const std::size_t h = img.dim(0), w = img.dim(1);
  const auto y0 = static_cast<std::ptrdiff_t>(std::floor(cy - r));
  const auto y1 = static_cast<std::ptrdiff_t>(std::ceil(cy + r));
  const auto x0 = static_cast<std::ptrdiff_t>(std::floor(cx - r));
  const auto x1 = static_cast<std::ptrdiff_t>(std::ceil(cx + r));
  for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(y0, 0); y <= std::min<std::ptrdiff_t>(y1, h - 1); ++y)
    for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(x0, 0); x <= std::min<std::ptrdiff_t>(x1, w - 1); ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      if (dy * dy + dx * dx <= r * r) img[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = value;
    }
}

}  // namespace

RenderedKnee render_knee(int grade, std::size_t h, std::size_t w, std::mt19937_64& rng) {
  if (grade < 0 || grade >= static_cast<int>(kGrades)) throw std::invalid_argument("grade outside 0..4");
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto between = [&](double a, double b) { return a + (b - a) * uni(rng); };

  const double H = static_cast<double>(h), W = static_cast<double>(w);
  const double s = H / 96.0;
  const double cx = W * (0.5 + between(-0.04, 0.04));
  const double half_w = W * between(0.20, 0.24);
  const double cy = H * (0.5 + between(-0.06, 0.06));
  const double gap = nominal_gap_height(grade, h) + between(-1.5, 1.5) * s;
  const double femur_top = between(0.0, 0.08) * H;
  const double tibia_bottom = H - between(0.0, 0.08) * H;
  const double sclerosis = 0.03 * grade * between(0.0, 2.0);

  Tensor img({h, w, 1});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double fy = static_cast<double>(y), u = (static_cast<double>(x) - cx) / half_w;
      double v = 0.15 + 0.05 * noise(rng);
      if (std::abs(u) <= 1.0) {
        const double femur_edge = cy - gap / 2 - 3.0 * s * u * u;
        const double tibia_edge = cy + gap / 2 + 2.0 * s * u * u;
        const bool in_femur = fy >= femur_top && fy < femur_edge;
        const bool in_tibia = fy >= tibia_edge && fy < tibia_bottom;
        if (in_femur || in_tibia) {
          v = 0.62 + 0.05 * noise(rng);
          const double to_edge = in_femur ? femur_edge - fy : fy - tibia_edge;
          if (to_edge < 4.0 * s) v += sclerosis;
        }
      }
      img[y * w + x] = v;
    }

  const double margin = 0.09 * H;
  const double top = std::max(0.0, std::floor(cy - gap / 2 - margin));
  const double bottom = std::min(H, std::ceil(cy + gap / 2 + margin));
  const double left = std::max(0.0, std::floor(cx - half_w - 4.0 * s));
  const double right = std::min(W, std::ceil(cx + half_w + 4.0 * s));
  Roi roi{static_cast<std::size_t>(top), static_cast<std::size_t>(left), static_cast<std::size_t>(bottom - top),
          static_cast<std::size_t>(right - left)};

  // Osteophyte-like spurs at the joint margins: grade - 1 or grade of them, so
  // neighbouring grades overlap on both cues.
  const double r = 2.2 * s;
  std::array<std::pair<double, double>, 4> slots{{
      {cy - gap / 2 - 3.0 * s - 1.5 * s, cx - half_w - 1.5 * s},
      {cy - gap / 2 - 3.0 * s - 1.5 * s, cx + half_w + 1.5 * s},
      {cy + gap / 2 + 2.0 * s + 1.5 * s, cx - half_w - 1.5 * s},
      {cy + gap / 2 + 2.0 * s + 1.5 * s, cx + half_w + 1.5 * s},
  }};
  std::shuffle(slots.begin(), slots.end(), rng);
  const int spurs = std::max(0, grade - (uni(rng) < 0.5 ? 1 : 0));
  for (int i = 0; i < spurs; ++i) draw_disc(img, slots[i].first, slots[i].second, r, 0.85);

  // Look-alike spurs outside the joint carry no grade information.
  const int distractors = static_cast<int>(uni(rng) * 5.0);
  for (int i = 0, tries = 0; i < distractors && tries < 200; ++tries) {
    const double dy = between(r, H - r), dx = between(r, W - r);
    const bool clear = dy + r < top || dy - r >= bottom || dx + r < left || dx - r >= right;
    if (!clear) continue;
    draw_disc(img, dy, dx, r, 0.85);
    ++i;
  }

  for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i], 0.0, 1.0);
  return {std::move(img), roi};
}

double measure_gap_height(const Tensor& image, const Roi& roi) {
  const std::size_t w = image.dim(1);
  const std::size_t c0 = roi.left + roi.width / 3, c1 = roi.left + 2 * roi.width / 3;
  std::vector<double> rows;
  for (std::size_t y = roi.top; y < roi.top + roi.height; ++y) {
    double acc = 0.0;
    for (std::size_t x = c0; x < c1; ++x) acc += image[y * w + x];
    rows.push_back(acc / static_cast<double>(c1 - c0));
  }
  const auto [lo, hi] = std::minmax_element(rows.begin(), rows.end());
  const double threshold = 0.5 * (*lo + *hi);
  std::size_t best = 0, run = 0;
  for (double v : rows) {
    run = v < threshold ? run + 1 : 0;
    best = std::max(best, run);
  }
  return static_cast<double>(best);
}

std::pair<Tensor, Tensor> split_bilateral(const Tensor& image, bool flip_right) {
  require_rank(image, 3, "split_bilateral");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (w < 2) throw ShapeError("split_bilateral: width must be at least 2");
  const std::size_t half = w / 2, right_begin = (w + 1) / 2;
  Tensor left({h, half, c}), right({h, half, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < half; ++x)
      for (std::size_t k = 0; k < c; ++k) {
        left[(y * half + x) * c + k] = image[(y * w + x) * c + k];
        const std::size_t dst = flip_right ? half - 1 - x : x;
        right[(y * half + dst) * c + k] = image[(y * w + right_begin + x) * c + k];
      }
  return {std::move(left), std::move(right)};
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  require_rank(image, 3, "resize");
  if (out_h == 0 || out_w == 0) throw ShapeError("resize: target must be positive");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  auto coord = [](std::size_t o, double scale, std::size_t extent, std::size_t& i0, std::size_t& i1, double& t) {
    const double src = std::clamp((static_cast<double>(o) + 0.5) * scale - 0.5, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(src));
    i1 = std::min(i0 + 1, extent - 1);
    t = src - static_cast<double>(i0);
  };
  Tensor out({out_h, out_w, c});
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double ty;
    coord(y, sy, h, y0, y1, ty);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double tx;
      coord(x, sx, w, x0, x1, tx);
      for (std::size_t k = 0; k < c; ++k) {
        const double a = image[(y0 * w + x0) * c + k], b = image[(y0 * w + x1) * c + k];
        const double d = image[(y1 * w + x0) * c + k], e = image[(y1 * w + x1) * c + k];
        const double top = a + tx * (b - a), bot = d + tx * (e - d);
        out[(y * out_w + x) * c + k] = top + ty * (bot - top);
      }
    }
  }
  return out;
}

Roi scale_roi(const Roi& roi, std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w) {
  const double sy = static_cast<double>(out_h) / static_cast<double>(in_h);
  const double sx = static_cast<double>(out_w) / static_cast<double>(in_w);
  const auto top = static_cast<std::size_t>(std::floor(static_cast<double>(roi.top) * sy));
  const auto left = static_cast<std::size_t>(std::floor(static_cast<double>(roi.left) * sx));
  const auto bottom = std::min(out_h, static_cast<std::size_t>(std::ceil(static_cast<double>(roi.top + roi.height) * sy)));
  const auto right = std::min(out_w, static_cast<std::size_t>(std::ceil(static_cast<double>(roi.left + roi.width) * sx)));
  return {top, left, bottom - top, right - left};
}

Tensor hist_equalize(const Tensor& image) {
  std::array<std::size_t, 256> hist{};
  std::vector<std::uint8_t> level(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    level[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
    ++hist[level[i]];
  }
  std::array<std::size_t, 256> cdf{};
  std::size_t run = 0, cdf_min = 0;
  for (std::size_t v = 0; v < 256; ++v) {
    run += hist[v];
    cdf[v] = run;
    if (cdf_min == 0 && run > 0) cdf_min = run;
  }
  const std::size_t n = image.size();
  if (n == cdf_min) return image;
  Tensor out(image.shape());
  const double denom = static_cast<double>(n - cdf_min);
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = static_cast<double>(cdf[level[i]] - cdf_min) / denom;
  return out;
}

double histogram_variance(const Tensor& image, std::size_t bins) {
  std::vector<double> hist(bins, 0.0);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const auto b = std::min(bins - 1, static_cast<std::size_t>(std::clamp(image[i], 0.0, 1.0) * static_cast<double>(bins)));
    hist[b] += 1.0;
  }
  const double n = static_cast<double>(image.size()), mean = 1.0 / static_cast<double>(bins);
  double var = 0.0;
  for (double v : hist) var += (v / n - mean) * (v / n - mean);
  return var / static_cast<double>(bins);
}

Tensor hflip(const Tensor& image) {
  require_rank(image, 3, "hflip");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) out[(y * w + (w - 1 - x)) * c + k] = image[(y * w + x) * c + k];
  return out;
}

Roi hflip_roi(const Roi& roi, std::size_t width) { return {roi.top, width - roi.left - roi.width, roi.height, roi.width}; }

std::vector<Sample> hflip_augment(const std::vector<Sample>& samples) {
  std::vector<Sample> out = samples;
  for (const Sample& s : samples) {
    if (s.split != Split::Train) continue;
    Sample m = s;
    m.id += "f";
    m.image = hflip(s.image);
    m.roi = hflip_roi(s.roi, s.image.dim(1));
    out.push_back(std::move(m));
  }
  return out;
}

void stratified_split(std::vector<Sample>& samples, const SplitFractions& fractions, std::uint64_t seed) {
  const std::size_t splits = 1 + (fractions.val > 0.0) + (fractions.test > 0.0);
  for (int grade = 0; grade < static_cast<int>(kGrades); ++grade) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].label == grade) idx.push_back(i);
    if (idx.empty()) continue;
    if (idx.size() < splits) {
      throw std::invalid_argument("stratified_split: grade " + std::to_string(grade) + " has " +
                                  std::to_string(idx.size()) + " samples, fewer than the " + std::to_string(splits) +
                                  " splits");
    }
    auto rng = derived_rng(seed, 0x5011u + static_cast<std::uint64_t>(grade));
    std::shuffle(idx.begin(), idx.end(), rng);
    const double n = static_cast<double>(idx.size());
    std::size_t n_test = static_cast<std::size_t>(std::lround(n * fractions.test));
    std::size_t n_val = static_cast<std::size_t>(std::lround(n * fractions.val));
    n_test = std::min(n_test, idx.size() - 1);
    n_val = std::min(n_val, idx.size() - 1 - n_test);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      samples[idx[k]].split = k < n_test ? Split::Test : (k < n_test + n_val ? Split::Val : Split::Train);
    }
  }
}

std::vector<const Sample*> select_split(const std::vector<Sample>& samples, Split split) {
  std::vector<const Sample*> out;
  for (const Sample& s : samples)
    if (s.split == split) out.push_back(&s);
  return out;
}

Tensor stack_images(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw std::invalid_argument("stack_images: empty batch");
  const Shape& first = samples[0]->image.shape();
  Tensor out({samples.size(), first[0], first[1], first[2]});
  const std::size_t per = samples[0]->image.size();
  for (std::size_t b = 0; b < samples.size(); ++b) {
    if (samples[b]->image.shape() != first) throw ShapeError("stack_images: sample " + samples[b]->id + " has a different size");
    std::copy_n(samples[b]->image.data(), per, out.data() + b * per);
  }
  return out;
}

std::vector<Sample> generate_synthetic(const DatasetManifest& manifest) {
  manifest.validate();
  std::vector<int> labels;
  for (std::size_t g = 0; g < kGrades; ++g) labels.insert(labels.end(), manifest.counts_per_grade[g], static_cast<int>(g));
  auto order_rng = derived_rng(manifest.seed, 0);
  std::shuffle(labels.begin(), labels.end(), order_rng);

  const std::size_t n = labels.size();
  const std::size_t pairs = (n + 1) / 2;
  const std::size_t rh = manifest.raw_h, rw = manifest.raw_w;
  std::vector<Sample> samples(n);
  const auto npairs = static_cast<std::ptrdiff_t>(pairs);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t pi = 0; pi < npairs; ++pi) {
    const auto p = static_cast<std::size_t>(pi);
    auto rng = derived_rng(manifest.seed, p + 1);
    const std::size_t li = 2 * p, ri = 2 * p + 1;
    const bool has_right = ri < n;
    RenderedKnee lk = render_knee(labels[li], rh, rw, rng);
    RenderedKnee rk = render_knee(has_right ? labels[ri] : 0, rh, rw, rng);

    // Bilateral radiograph: left knee, one background column, mirrored right knee.
    const std::size_t bw = 2 * rw + 1;
    Tensor radiograph({rh, bw, 1});
    std::normal_distribution<double> noise(0.0, 1.0);
    const Tensor right_anatomical = hflip(rk.image);
    for (std::size_t y = 0; y < rh; ++y) {
      for (std::size_t x = 0; x < rw; ++x) {
        radiograph[y * bw + x] = lk.image[y * rw + x];
        radiograph[y * bw + rw + 1 + x] = right_anatomical[y * rw + x];
      }
      radiograph[y * bw + rw] = std::clamp(0.15 + 0.05 * noise(rng), 0.0, 1.0);
    }

    auto [left_half, right_half] = split_bilateral(radiograph, manifest.flip_right);
    const Roi right_roi = manifest.flip_right ? rk.roi : hflip_roi(rk.roi, rw);

    auto finish = [&](std::size_t index, const Tensor& half, const Roi& roi, Side side) {
      Sample& s = samples[index];
      char id[16];
      std::snprintf(id, sizeof(id), "%05zu", index);
      s.id = id;
      s.label = labels[index];
      s.side = side;
      s.image = hist_equalize(resize_keep_aspect(half, manifest.image_h, manifest.image_w));
      s.roi = scale_roi(roi, rh, rw, manifest.image_h, manifest.image_w);
    };
    finish(li, left_half, lk.roi, Side::Left);
    if (has_right) finish(ri, right_half, right_roi, Side::Right);
  }

  stratified_split(samples, manifest.fractions, manifest.seed);
  return samples;
}

}  // namespace kneeatt
