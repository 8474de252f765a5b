#include "multivae/data_io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace multivae::data {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'M', 'V', 'A', 'E', 'B', 'L', 'B'};

void put_u32le(std::ofstream& out, std::uint32_t v) {
  const std::uint8_t bytes[4] = {static_cast<std::uint8_t>(v & 0xff),
                                 static_cast<std::uint8_t>((v >> 8) & 0xff),
                                 static_cast<std::uint8_t>((v >> 16) & 0xff),
                                 static_cast<std::uint8_t>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t get_u32le(std::ifstream& in) {
  std::uint8_t bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

// Floats are serialized little-endian regardless of host order.
static_assert(std::endian::native == std::endian::little,
              "blob writer assumes a little-endian host");

}  // namespace

void write_blob(const std::filesystem::path& path, const Blob& blob) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw GenerationError("write_blob: cannot open " + path.string());
  out.write(kMagic, 8);
  const std::uint8_t dtype = static_cast<std::uint8_t>(blob.dtype);
  const std::uint8_t rank = static_cast<std::uint8_t>(blob.shape.size());
  out.write(reinterpret_cast<const char*>(&dtype), 1);
  out.write(reinterpret_cast<const char*>(&rank), 1);
  for (Index d : blob.shape) put_u32le(out, static_cast<std::uint32_t>(d));
  switch (blob.dtype) {
    case BlobType::f32:
      out.write(reinterpret_cast<const char*>(blob.f32.data()),
                static_cast<std::streamsize>(blob.f32.size() * sizeof(float)));
      break;
    case BlobType::u16:
      out.write(reinterpret_cast<const char*>(blob.u16.data()),
                static_cast<std::streamsize>(blob.u16.size() * sizeof(std::uint16_t)));
      break;
    case BlobType::u8:
      out.write(reinterpret_cast<const char*>(blob.u8.data()),
                static_cast<std::streamsize>(blob.u8.size()));
      break;
  }
  if (!out) throw GenerationError("write_blob: write failed for " + path.string());
}

Blob read_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("read_blob: cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IntegrityError("read_blob: bad magic in " + path.string());
  std::uint8_t dtype = 0, rank = 0;
  in.read(reinterpret_cast<char*>(&dtype), 1);
  in.read(reinterpret_cast<char*>(&rank), 1);
  if (!in || dtype < 1 || dtype > 3) throw IntegrityError("read_blob: bad dtype");
  Blob blob;
  blob.dtype = static_cast<BlobType>(dtype);
  for (int i = 0; i < rank; ++i) blob.shape.push_back(static_cast<Index>(get_u32le(in)));
  const Index n = blob.numel();
  switch (blob.dtype) {
    case BlobType::f32:
      blob.f32.resize(static_cast<std::size_t>(n));
      in.read(reinterpret_cast<char*>(blob.f32.data()),
              static_cast<std::streamsize>(blob.f32.size() * sizeof(float)));
      break;
    case BlobType::u16:
      blob.u16.resize(static_cast<std::size_t>(n));
      in.read(reinterpret_cast<char*>(blob.u16.data()),
              static_cast<std::streamsize>(blob.u16.size() * sizeof(std::uint16_t)));
      break;
    case BlobType::u8:
      blob.u8.resize(static_cast<std::size_t>(n));
      in.read(reinterpret_cast<char*>(blob.u8.data()), static_cast<std::streamsize>(n));
      break;
  }
  if (!in) throw IntegrityError("read_blob: truncated payload in " + path.string());
  return blob;
}

std::string Manifest::to_json() const {
  json j{{"format", "multivae-dataset-v1"},
         {"config", json::parse(config.to_json())},
         {"seed", seed},
         {"n", n},
         {"vocabulary", vocabulary},
         {"thresholds",
          {{"reach_m", thresholds.reach_m},
           {"move_m", thresholds.move_m},
           {"lift_m", thresholds.lift_m}}},
         {"shapes",
          {{"image", {n, image_size, image_size, 3}},
           {"text", {n, l_max}},
           {"trajectory", {n, t_max, 4}},
           {"trajectory_mask", {n, t_max}}}}};
  return j.dump(2);
}

Manifest Manifest::from_json(const std::string& text) {
  json j = json::parse(text);
  if (j.at("format") != "multivae-dataset-v1")
    throw IntegrityError("manifest: unknown format field");
  Manifest m;
  m.config = scene::DatasetConfig::from_json(j.at("config").dump());
  m.seed = j.at("seed");
  m.n = j.at("n");
  m.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
  m.thresholds.reach_m = j.at("thresholds").at("reach_m");
  m.thresholds.move_m = j.at("thresholds").at("move_m");
  m.thresholds.lift_m = j.at("thresholds").at("lift_m");
  m.image_size = j.at("shapes").at("image")[1];
  m.l_max = j.at("shapes").at("text")[1];
  m.t_max = j.at("shapes").at("trajectory")[1];
  return m;
}

Manifest generate_dataset(const scene::DatasetConfig& config, Index n, std::uint64_t seed,
                          const std::filesystem::path& out_dir) {
  config.validate();
  if (n < 1) throw ConfigError("generate_dataset: n must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);

  const Vocabulary vocab = default_vocabulary();
  Manifest manifest;
  manifest.config = config;
  manifest.seed = seed;
  manifest.n = n;
  manifest.vocabulary = vocab.words;

  Blob images{BlobType::f32, {n, kImageSize, kImageSize, 3}, {}, {}, {}};
  Blob text{BlobType::u16, {n, kDefaultLMax}, {}, {}, {}};
  Blob traj{BlobType::f32, {n, kDefaultTMax, 4}, {}, {}, {}};
  Blob mask{BlobType::u8, {n, kDefaultTMax}, {}, {}, {}};
  images.f32.resize(static_cast<std::size_t>(images.numel()));
  text.u16.resize(static_cast<std::size_t>(text.numel()));
  traj.f32.resize(static_cast<std::size_t>(traj.numel()));
  mask.u8.resize(static_cast<std::size_t>(mask.numel()));

  for (Index i = 0; i < n; ++i) {
    try {
      Rng trial_rng = derive_rng(seed, "trial", static_cast<std::uint64_t>(i));
      scene::SceneSpec spec = scene::sample_scene(config, trial_rng);
      ImageTensor image = scene::render_topview(spec);
      Trajectory demo = scene::synthesize_trajectory(spec, trial_rng);
      TokenSequence instr = scene::make_instruction(spec, vocab);
      scene::SuccessReport rep = scene::check_success(spec, demo, manifest.thresholds);
      if (!rep.success)
        throw GenerationError("generate_dataset: demonstration failed its own task");

      float* img_dst = images.f32.data() + i * kImageSize * kImageSize * 3;
      for (Index p = 0; p < image.pixels.numel(); ++p)
        img_dst[p] = static_cast<float>(image.pixels[p]);
      std::uint16_t* txt_dst = text.u16.data() + i * kDefaultLMax;
      for (Index p = 0; p < kDefaultLMax; ++p)
        txt_dst[p] = static_cast<std::uint16_t>(instr.tokens[static_cast<std::size_t>(p)]);
      float* traj_dst = traj.f32.data() + i * kDefaultTMax * 4;
      std::uint8_t* mask_dst = mask.u8.data() + i * kDefaultTMax;
      for (Index r = 0; r < demo.length(); ++r) {
        for (Index c = 0; c < 4; ++c)
          traj_dst[r * 4 + c] = static_cast<float>(demo.steps[r * 4 + c]);
        mask_dst[r] = 1;
      }
    } catch (const std::exception& e) {
      throw GenerationError("generate_dataset: trial " + std::to_string(i) + ": " + e.what());
    }
  }

  write_blob(out_dir / "images.bin", images);
  write_blob(out_dir / "text.bin", text);
  write_blob(out_dir / "traj.bin", traj);
  write_blob(out_dir / "traj_mask.bin", mask);
  std::ofstream mf(out_dir / "manifest.json", std::ios::trunc);
  if (!mf) throw GenerationError("generate_dataset: cannot write manifest");
  mf << manifest.to_json() << "\n";
  return manifest;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IntegrityError("load_dataset: missing manifest in " + dir.string());
  std::string text((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
  Dataset ds;
  ds.manifest = Manifest::from_json(text);

  Blob images = read_blob(dir / "images.bin");
  Blob tokens = read_blob(dir / "text.bin");
  Blob traj = read_blob(dir / "traj.bin");
  Blob mask = read_blob(dir / "traj_mask.bin");
  const Index n = ds.manifest.n;
  if (images.shape != std::vector<Index>{n, ds.manifest.image_size, ds.manifest.image_size, 3} ||
      tokens.shape != std::vector<Index>{n, ds.manifest.l_max} ||
      traj.shape != std::vector<Index>{n, ds.manifest.t_max, 4} ||
      mask.shape != std::vector<Index>{n, ds.manifest.t_max})
    throw IntegrityError("load_dataset: blob shapes disagree with the manifest");

  ds.episodes.resize(static_cast<std::size_t>(n));
  const Index img_per = ds.manifest.image_size * ds.manifest.image_size * 3;
  for (Index i = 0; i < n; ++i) {
    model::Episode& ep = ds.episodes[static_cast<std::size_t>(i)];
    ep.image = Tensor({ds.manifest.image_size, ds.manifest.image_size, 3});
    for (Index p = 0; p < img_per; ++p)
      ep.image[p] = static_cast<double>(images.f32[static_cast<std::size_t>(i * img_per + p)]);
    for (Index p = 0; p < ds.manifest.l_max; ++p)
      ep.text.tokens.push_back(
          static_cast<Index>(tokens.u16[static_cast<std::size_t>(i * ds.manifest.l_max + p)]));
    // store only the valid prefix; the mask reconstructs the padded form
    Index valid = 0;
    for (Index r = 0; r < ds.manifest.t_max; ++r)
      if (mask.u8[static_cast<std::size_t>(i * ds.manifest.t_max + r)]) ++valid;
    ep.traj.steps = Tensor({valid, 4});
    ep.traj.mask.assign(static_cast<std::size_t>(valid), true);
    Index row = 0;
    for (Index r = 0; r < ds.manifest.t_max; ++r) {
      if (!mask.u8[static_cast<std::size_t>(i * ds.manifest.t_max + r)]) continue;
      for (Index c = 0; c < 4; ++c)
        ep.traj.steps[row * 4 + c] =
            static_cast<double>(traj.f32[static_cast<std::size_t>((i * ds.manifest.t_max + r) * 4 + c)]);
      ++row;
    }
  }
  return ds;
}

}  // namespace multivae::data
