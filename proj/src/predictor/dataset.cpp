#include "xai/predictor/dataset.hpp"

#include "xai/error.hpp"
#include "xai/io/blob.hpp"
#include "xai/io/image_codec.hpp"
#include "xai/predictor/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <random>

namespace xai {
namespace {

using Rgb = std::array<double, 3>;

constexpr Rgb kSnow{0.72, 0.74, 0.78};
constexpr Rgb kGrass{0.66, 0.72, 0.62};

std::string numbered(const char* stem, Index i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04ld.png", stem, static_cast<long>(i));
  return buf;
}

}  // namespace

void validate(const DatasetConfig& config) {
  if (config.n < 2 || config.n % 2 != 0) {
    throw DataError("dataset size must be even and >= 2 for exact class balance, got " + std::to_string(config.n));
  }
  if (!(config.beta >= 0.0 && config.beta <= 1.0)) {
    throw DataError("bias strength beta must lie in [0, 1], got " + std::to_string(config.beta));
  }
}

std::vector<ImageLatent> sample_latents(const DatasetConfig& config) {
  validate(config);
  std::mt19937_64 master(config.seed);
  std::vector<Index> labels(static_cast<std::size_t>(config.n));
  for (Index i = 0; i < config.n; ++i) labels[static_cast<std::size_t>(i)] = i < config.n / 2 ? 0 : 1;
  std::shuffle(labels.begin(), labels.end(), master);

  std::vector<ImageLatent> out;
  out.reserve(labels.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<Index> coin(0, 1);
  std::uniform_int_distribution<Index> horizon(30, 36);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::seed_seq seq{config.seed, static_cast<std::uint64_t>(i), std::uint64_t{0x5eed}};
    std::mt19937_64 rng(seq);
    ImageLatent l;
    l.label = labels[i];
    l.bias_applied = u(rng) < config.beta;
    l.background = l.bias_applied ? l.label : coin(rng);
    l.orientation = u(rng) < kForegroundAgreement ? l.label : 1 - l.label;
    l.horizon = horizon(rng);
    l.render_seed = rng();
    out.push_back(l);
  }
  return out;
}

Tensor render_image(const ImageLatent& latent) {
  constexpr Index side = kImageSide;
  std::mt19937_64 rng(latent.render_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  Tensor img({side, side, 3});

  // Sky with label-independent clutter.
  const Rgb sky{uniform(0.1, 0.9), uniform(0.1, 0.9), uniform(0.1, 0.9)};
  for (Index r = 0; r < latent.horizon; ++r)
    for (Index c = 0; c < side; ++c)
      for (Index ch = 0; ch < 3; ++ch) img.at(r, c, ch) = sky[static_cast<std::size_t>(ch)];
  for (int blob = 0; blob < 3; ++blob) {
    const double cr = uniform(0.0, static_cast<double>(latent.horizon));
    const double cc = uniform(0.0, static_cast<double>(side));
    const double radius = uniform(4.0, 9.0);
    const Rgb color{sky[0] + uniform(-0.15, 0.15), sky[1] + uniform(-0.15, 0.15), sky[2] + uniform(-0.15, 0.15)};
    for (Index r = 0; r < latent.horizon; ++r)
      for (Index c = 0; c < side; ++c) {
        const double dr = static_cast<double>(r) - cr, dc = static_cast<double>(c) - cc;
        if (dr * dr + dc * dc <= radius * radius)
          for (Index ch = 0; ch < 3; ++ch) img.at(r, c, ch) = color[static_cast<std::size_t>(ch)];
      }
  }

  // Foreground bar, always above the horizon.
  {
    const Index long_side = 22, short_side = 6;
    const Index cr = 12 + static_cast<Index>(u(rng) * 7.0);
    const Index cc = 16 + static_cast<Index>(u(rng) * 32.0);
    const Index hh = latent.orientation == 0 ? short_side : long_side;
    const Index ww = latent.orientation == 0 ? long_side : short_side;
    const Rgb color{u(rng), u(rng), u(rng)};
    for (Index r = cr - hh / 2; r < cr - hh / 2 + hh; ++r)
      for (Index c = cc - ww / 2; c < cc - ww / 2 + ww; ++c)
        for (Index ch = 0; ch < 3; ++ch) img.at(r, c, ch) = color[static_cast<std::size_t>(ch)];
  }

  // Ground band: the planted cue.
  {
    std::normal_distribution<double> noise(0.0, 1.0);
    const Rgb& base = latent.background == 0 ? kSnow : kGrass;
    const double brightness = uniform(0.9, 1.1);
    for (Index r = latent.horizon; r < side; ++r)
      for (Index c = 0; c < side; ++c) {
        const double texture = latent.background == 0 ? 0.03 * noise(rng)
                                                       : ((c % 4) < 2 ? 0.04 : -0.04) + 0.02 * noise(rng);
        for (Index ch = 0; ch < 3; ++ch) img.at(r, c, ch) = base[static_cast<std::size_t>(ch)] * brightness + texture;
      }
  }

  img.data() = img.data().cwiseMax(0.0).cwiseMin(1.0);
  return img;
}

Mask ground_mask(const ImageLatent& latent) {
  Mask m = Mask::Zero(kImageSide, kImageSide);
  m.bottomRows(kImageSide - latent.horizon).setOnes();
  return m;
}

PlantedBiasDataset generate_dataset(const DatasetConfig& config) {
  PlantedBiasDataset ds;
  ds.config = config;
  ds.latents = sample_latents(config);
  ds.images.reserve(ds.latents.size());
  ds.masks.reserve(ds.latents.size());
  for (const auto& l : ds.latents) {
    ds.images.push_back(render_image(l));
    ds.masks.push_back(ground_mask(l));
  }
  return ds;
}

void export_dataset(const PlantedBiasDataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["v"] = 1;
  manifest["kind"] = "planted-bias-dataset";
  manifest["config"] = {{"n", dataset.config.n}, {"beta", dataset.config.beta}, {"seed", dataset.config.seed}};
  nlohmann::json items = nlohmann::json::array();
  for (Index i = 0; i < dataset.size(); ++i) {
    const auto& l = dataset.latents[static_cast<std::size_t>(i)];
    const std::string image_file = numbered("image", i), mask_file = numbered("mask", i);
    io::write_file(dir / image_file, io::encode_png(io::to_image8(dataset.images[static_cast<std::size_t>(i)])));
    const Mask& m = dataset.masks[static_cast<std::size_t>(i)];
    io::Image8 mask_img{static_cast<int>(m.cols()), static_cast<int>(m.rows()), 1, {}};
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) mask_img.pixels.push_back(m(r, c) ? 255 : 0);
    io::write_file(dir / mask_file, io::encode_png(mask_img));
    items.push_back({{"image", image_file},
                     {"mask", mask_file},
                     {"label", l.label},
                     {"background", l.background},
                     {"bias_applied", l.bias_applied},
                     {"orientation", l.orientation},
                     {"horizon", l.horizon}});
  }
  manifest["images"] = std::move(items);
  io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

PlantedBiasDataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed dataset manifest: ") + e.what());
  }
  if (manifest.value("v", 0) != 1 || manifest.value("kind", "") != "planted-bias-dataset") {
    throw VersionError("unsupported dataset manifest in " + dir.string());
  }
  DatasetConfig cfg;
  cfg.n = manifest.at("config").at("n").get<Index>();
  cfg.beta = manifest.at("config").at("beta").get<double>();
  cfg.seed = manifest.at("config").at("seed").get<std::uint64_t>();
  PlantedBiasDataset ds = generate_dataset(cfg);
  const auto& items = manifest.at("images");
  if (static_cast<Index>(items.size()) != ds.size()) throw FormatError("dataset manifest image count mismatch");
  for (Index i = 0; i < ds.size(); ++i) {
    if (items[static_cast<std::size_t>(i)].at("label").get<Index>() != ds.label(i)) {
      throw FormatError("dataset manifest labels do not match regenerated data");
    }
  }
  return ds;
}

}  // namespace xai
