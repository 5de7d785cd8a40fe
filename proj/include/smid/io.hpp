#pragma once

// Plain-text persistence: records and tables as CSV, hashes for provenance.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "smid/lti_sim.hpp"

namespace smid {

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path);
  out << text;
  if (!out) throw InvalidInput("write failed for " + path);
}

inline std::string hash_hex(std::uint64_t h) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

inline std::string file_hash(const std::string& path) {
  const std::string text = read_file(path);
  return hash_hex(fnv1a(text.data(), text.size()));
}

/// Column-oriented CSV builder with a fixed header.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(const std::vector<std::string>& row) {
    require(row.size() == header_.size(), "CSV row has the wrong number of fields");
    rows_.push_back(row);
  }

  std::string str() const {
    std::string s;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (i) s += ',';
        s += r[i];
      }
      s += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return s;
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw InvalidInput("not a number in " + where + ": '" + s + "'");
  }
  if (used != s.size()) throw InvalidInput("not a number in " + where + ": '" + s + "'");
  return v;
}

/// Columns k,u,y,z (z = noise-free output); z is left out when unknown.
inline std::string record_csv(const IORecord& io) {
  if (!io.has_true_output) {
    CsvTable t({"k", "u", "y"});
    for (std::size_t k = 0; k < io.size(); ++k) t.add({std::to_string(k), format_double(io.u[k]), format_double(io.y[k])});
    return t.str();
  }
  CsvTable t({"k", "u", "y", "z"});
  for (std::size_t k = 0; k < io.size(); ++k)
    t.add({std::to_string(k), format_double(io.u[k]), format_double(io.y[k]), format_double(io.z[k])});
  return t.str();
}

/// Reads k,u,y[,z]. Without a z column the record has no true output and
/// z is set to y.
inline IORecord parse_record_csv(const std::string& text, const std::string& name) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput(name + " is empty");
  const auto header = split_csv_line(line);
  int iu = -1, iy = -1, iz = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "u") iu = static_cast<int>(i);
    if (header[i] == "y") iy = static_cast<int>(i);
    if (header[i] == "z") iz = static_cast<int>(i);
  }
  if (iu < 0 || iy < 0) throw InvalidInput(name + " needs columns u and y");
  IORecord io;
  io.has_true_output = iz >= 0;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    const std::string where = name + " line " + std::to_string(row);
    if (f.size() != header.size()) throw InvalidInput("wrong field count in " + where);
    io.u.push_back(parse_double(f[static_cast<std::size_t>(iu)], where));
    io.y.push_back(parse_double(f[static_cast<std::size_t>(iy)], where));
    io.z.push_back(iz >= 0 ? parse_double(f[static_cast<std::size_t>(iz)], where) : io.y.back());
  }
  if (io.size() == 0) throw InvalidInput(name + " has no samples");
  return io;
}

}  // namespace smid
