#include "kneeatt/dataset_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "kneeatt/config.hpp"

namespace kneeatt {

namespace {

constexpr char kTensorMagic[8] = {'K', 'A', 'T', 'T', 'T', 'N', 'S', 'R'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("truncated tensor file " + path.string());
  return v;
}

}  // namespace

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(kTensorMagic, sizeof(kTensorMagic));
  put<std::uint32_t>(f, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(f, d);
  f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  if (!f.read(magic, sizeof(magic)) || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(path.string() + " is not a tensor file");
  }
  const auto rank = get<std::uint32_t>(f, path);
  if (rank == 0 || rank > 8) throw std::runtime_error(path.string() + ": bad rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(f, path)));
  Tensor t(shape);
  if (!f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
    throw std::runtime_error("truncated tensor file " + path.string());
  }
  return t;
}

void save_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir / "samples");
  {
    std::ofstream f(dir / "manifest.json");
    if (!f) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
    f << manifest_to_text(manifest);
  }
  std::ofstream index(dir / "index.csv");
  if (!index) throw std::runtime_error("cannot write " + (dir / "index.csv").string());
  index << "id,label,side,split,roi_top,roi_left,roi_height,roi_width\n";
  for (const Sample& s : samples) {
    write_tensor(s.image, dir / "samples" / (s.id + ".bin"));
    index << s.id << ',' << s.label << ',' << to_string(s.side) << ',' << to_string(s.split) << ',' << s.roi.top << ','
          << s.roi.left << ',' << s.roi.height << ',' << s.roi.width << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DatasetNotFound("dataset directory not found: " + dir.string());
  const auto manifest_path = dir / "manifest.json", index_path = dir / "index.csv";
  if (!std::filesystem::exists(manifest_path)) throw DatasetNotFound("dataset manifest not found: " + manifest_path.string());
  if (!std::filesystem::exists(index_path)) throw DatasetNotFound("dataset index not found: " + index_path.string());

  Dataset ds;
  {
    std::ifstream f(manifest_path);
    std::stringstream ss;
    ss << f.rdbuf();
    ds.manifest = parse_manifest(ss.str());
  }
  std::ifstream index(index_path);
  std::string line;
  std::getline(index, line);
  std::size_t line_no = 1;
  while (std::getline(index, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 8) {
      throw std::runtime_error(index_path.string() + ":" + std::to_string(line_no) + ": expected 8 columns");
    }
    Sample s;
    s.id = cells[0];
    s.label = std::stoi(cells[1]);
    s.side = parse_side(cells[2]);
    s.split = parse_split(cells[3]);
    s.roi = {std::stoul(cells[4]), std::stoul(cells[5]), std::stoul(cells[6]), std::stoul(cells[7])};
    s.image = read_tensor(dir / "samples" / (s.id + ".bin"));
    if (s.label < 0 || s.label >= static_cast<int>(kGrades)) {
      throw std::runtime_error(index_path.string() + ":" + std::to_string(line_no) + ": label outside 0..4");
    }
    if (s.image.rank() != 3 || s.roi.top + s.roi.height > s.image.dim(0) || s.roi.left + s.roi.width > s.image.dim(1)) {
      throw std::runtime_error(index_path.string() + ":" + std::to_string(line_no) + ": roi outside image");
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace kneeatt
