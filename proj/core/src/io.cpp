#include "surfreg/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "surfreg/error.hpp"

namespace SURFREG_NAMESPACE {

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

bool blank_or_comment(std::string_view line) {
  auto tokens = split(line);
  return tokens.empty() || tokens.front().front() == '#';
}

class LineReader {
 public:
  LineReader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

  // Next non-blank, non-comment line; false at end of input.
  bool next(std::string& line) {
    while (std::getline(in_, line)) {
      ++lineno_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!blank_or_comment(line)) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(name_ + ":" + std::to_string(lineno_) + ": " + what);
  }

  double number(std::string_view token) const {
    double v = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size() || !std::isfinite(v)) {
      fail("invalid number '" + std::string(token) + "'");
    }
    return v;
  }

  std::size_t count(std::string_view token) const {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size()) {
      fail("invalid count '" + std::string(token) + "'");
    }
    return v;
  }

  const std::string& name() const { return name_; }

 private:
  std::istream& in_;
  std::string name_;
  std::size_t lineno_ = 0;
};

PointCloud read_xyz(LineReader& r) {
  PointCloud pc;
  std::string line;
  int columns = 0;
  while (r.next(line)) {
    auto t = split(line);
    if (t.size() != 3 && t.size() != 4) r.fail("expected 3 or 4 columns, got " + std::to_string(t.size()));
    if (columns == 0) columns = static_cast<int>(t.size());
    if (static_cast<int>(t.size()) != columns) r.fail("inconsistent column count");
    pc.points.push_back({r.number(t[0]), r.number(t[1]), r.number(t[2])});
    if (columns == 4) pc.labels.push_back(r.count(t[3]));
  }
  if (pc.points.empty()) r.fail("empty file: no points");
  return pc;
}

PointCloud read_off(LineReader& r) {
  std::string line;
  if (!r.next(line)) r.fail("empty file: missing OFF header");
  auto t = split(line);
  std::size_t first = 0;
  if (t.front() != "OFF") r.fail("missing OFF header");
  if (t.size() == 1) {
    if (!r.next(line)) r.fail("missing vertex/face counts");
    t = split(line);
  } else {
    first = 1;  // counts on the header line
  }
  if (t.size() - first < 2) r.fail("expected vertex and face counts");
  const std::size_t nv = r.count(t[first]);
  if (nv == 0) r.fail("OFF file declares no vertices");
  PointCloud pc;
  pc.points.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    if (!r.next(line)) r.fail("expected " + std::to_string(nv) + " vertices, found " + std::to_string(i));
    auto v = split(line);
    if (v.size() < 3) r.fail("vertex needs 3 coordinates");
    pc.points.push_back({r.number(v[0]), r.number(v[1]), r.number(v[2])});
  }
  return pc;
}

PointCloud read_ply(LineReader& r) {
  std::string line;
  if (!r.next(line) || split(line).front() != "ply") r.fail("empty file or missing 'ply' header");
  std::size_t vertices = 0;
  bool in_vertex = false, seen_vertex = false, ascii = false;
  std::vector<std::string> props;
  for (;;) {
    if (!r.next(line)) r.fail("missing end_header");
    auto t = split(line);
    if (t.front() == "end_header") break;
    if (t.front() == "format") {
      if (t.size() < 2 || t[1] != "ascii") r.fail("only ASCII PLY is supported");
      ascii = true;
    } else if (t.front() == "element") {
      if (t.size() != 3) r.fail("malformed element line");
      in_vertex = t[1] == "vertex";
      if (in_vertex) {
        if (seen_vertex) r.fail("duplicate vertex element");
        seen_vertex = true;
        vertices = r.count(t[2]);
      }
    } else if (t.front() == "property") {
      if (in_vertex) {
        if (t.size() < 3 || t[1] == "list") r.fail("unsupported vertex property");
        props.emplace_back(t.back());
      }
    } else if (t.front() != "comment" && t.front() != "obj_info") {
      r.fail("unexpected header line");
    }
  }
  if (!ascii) r.fail("missing format line");
  if (!seen_vertex || vertices == 0) r.fail("no vertices declared");
  auto column = [&](const std::string& name) -> std::ptrdiff_t {
    auto it = std::find(props.begin(), props.end(), name);
    return it == props.end() ? -1 : it - props.begin();
  };
  const std::ptrdiff_t cx = column("x"), cy = column("y"), cz = column("z"), cl = column("label");
  if (cx < 0 || cy < 0 || cz < 0) r.fail("vertex element lacks x, y or z");
  PointCloud pc;
  pc.points.reserve(vertices);
  for (std::size_t i = 0; i < vertices; ++i) {
    if (!r.next(line)) {
      r.fail("expected " + std::to_string(vertices) + " vertices, found " + std::to_string(i));
    }
    auto t = split(line);
    if (t.size() != props.size()) r.fail("vertex has " + std::to_string(t.size()) + " values, expected " + std::to_string(props.size()));
    pc.points.push_back({r.number(t[cx]), r.number(t[cy]), r.number(t[cz])});
    if (cl >= 0) pc.labels.push_back(r.count(t[cl]));
  }
  return pc;
}

std::string coords(const Point3& p) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g", p[0], p[1], p[2]);
  return buf;
}

}  // namespace

CloudFormat parse_cloud_format(const std::string& name) {
  if (name == "xyz") return CloudFormat::kXyz;
  if (name == "off") return CloudFormat::kOff;
  if (name == "ply") return CloudFormat::kPly;
  throw FormatError("unknown cloud format '" + name + "' (expected xyz, off or ply)");
}

const char* to_string(CloudFormat format) {
  switch (format) {
    case CloudFormat::kXyz: return "xyz";
    case CloudFormat::kOff: return "off";
    case CloudFormat::kPly: return "ply";
  }
  return "?";
}

CloudFormat format_from_path(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".xyz") return CloudFormat::kXyz;
  if (ext == ".off") return CloudFormat::kOff;
  if (ext == ".ply") return CloudFormat::kPly;
  throw FormatError(path + ": unknown cloud format (extension '" + ext + "')");
}

PointCloud read_cloud(std::istream& in, CloudFormat format, const std::string& name) {
  LineReader reader(in, name);
  PointCloud pc;
  switch (format) {
    case CloudFormat::kXyz: pc = read_xyz(reader); break;
    case CloudFormat::kOff: pc = read_off(reader); break;
    case CloudFormat::kPly: pc = read_ply(reader); break;
  }
  try {
    validate(pc);
  } catch (const GeometryError& e) {
    throw FormatError(name + ": " + e.what());
  }
  return pc;
}

void write_cloud(std::ostream& out, const PointCloud& pc, CloudFormat format) {
  const bool labels = pc.has_labels();
  switch (format) {
    case CloudFormat::kXyz:
      for (std::size_t i = 0; i < pc.size(); ++i) {
        out << coords(pc.points[i]);
        if (labels) out << ' ' << pc.labels[i];
        out << '\n';
      }
      break;
    case CloudFormat::kOff:
      out << "OFF\n" << pc.size() << " 0 0\n";
      for (const auto& p : pc.points) out << coords(p) << '\n';
      break;
    case CloudFormat::kPly:
      out << "ply\nformat ascii 1.0\nelement vertex " << pc.size()
          << "\nproperty double x\nproperty double y\nproperty double z\n";
      if (labels) out << "property uint label\n";
      out << "end_header\n";
      for (std::size_t i = 0; i < pc.size(); ++i) {
        out << coords(pc.points[i]);
        if (labels) out << ' ' << pc.labels[i];
        out << '\n';
      }
      break;
  }
}

PointCloud load_cloud(const std::string& path, std::optional<CloudFormat> format) {
  const CloudFormat f = format ? *format : format_from_path(path);
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open file");
  return read_cloud(in, f, path);
}

void save_cloud(const PointCloud& pc, const std::string& path, std::optional<CloudFormat> format) {
  const CloudFormat f = format ? *format : format_from_path(path);
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open file for writing");
  write_cloud(out, pc, f);
  if (!out) throw FormatError(path + ": write failed");
}

std::vector<PointCloud> load_cloud_folder(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError(dir + ": not a directory");
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    try {
      format_from_path(entry.path().string());
      files.push_back(entry.path().string());
    } catch (const FormatError&) {
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw FormatError(dir + ": no cloud files");
  std::vector<PointCloud> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_cloud(f));
  return out;
}

void write_correspondence(std::ostream& out, const CorrespondenceMap& map) {
  for (std::size_t i = 0; i < map.size(); ++i) out << i << ' ' << map.target[i] << '\n';
}

CorrespondenceMap read_correspondence(std::istream& in, const std::string& name) {
  LineReader reader(in, name);
  CorrespondenceMap map;
  std::string line;
  while (reader.next(line)) {
    auto t = split(line);
    if (t.size() != 2) reader.fail("expected two columns");
    if (reader.count(t[0]) != map.size()) reader.fail("rows must be numbered 0, 1, 2, ...");
    map.target.push_back(reader.count(t[1]));
  }
  if (map.target.empty()) reader.fail("empty file: no correspondences");
  return map;
}

void save_correspondence(const CorrespondenceMap& map, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open file for writing");
  write_correspondence(out, map);
}

CorrespondenceMap load_correspondence(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open file");
  return read_correspondence(in, path);
}

}  // namespace SURFREG_NAMESPACE
