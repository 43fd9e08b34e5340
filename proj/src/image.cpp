#include "dice/image.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "dice/error.hpp"

namespace dice {

std::size_t BinaryMap::count() const {
  std::size_t n = 0;
  for (auto v : data) n += v != 0;
  return n;
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(const std::string& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    const char c = buf[pos];
    if (c == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) {
    tok += buf[pos++];
  }
  return tok;
}

std::size_t parse_dim(const std::string& tok, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const unsigned long v = std::stoul(tok, &used);
    if (used != tok.size() || v == 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError("malformed netpbm header in " + path.string());
  }
}

std::uint8_t quantize(float v) {
  const float clamped = std::fmin(std::fmax(v, 0.0f), 1.0f);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
}

void write_netpbm(const char* magic, const ImageTensor& image,
                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << magic << "\n" << image.width << " " << image.height << "\n255\n";
  std::string payload(image.data.size(), '\0');
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    payload[i] = static_cast<char>(quantize(image.data[i]));
  }
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

}  // namespace

ImageTensor read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  const std::string magic = next_token(buf, pos);
  std::size_t channels = 0;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    throw DataError("unsupported image format (expected P5/P6): " + path.string());
  }
  const std::size_t width = parse_dim(next_token(buf, pos), path);
  const std::size_t height = parse_dim(next_token(buf, pos), path);
  const std::size_t maxval = parse_dim(next_token(buf, pos), path);
  if (maxval != 255) throw DataError("only maxval 255 is supported: " + path.string());
  ++pos;  // single whitespace after maxval
  const std::size_t n = width * height * channels;
  if (buf.size() < pos + n) throw DataError("truncated image: " + path.string());

  ImageTensor image(height, width, channels);
  for (std::size_t i = 0; i < n; ++i) {
    image.data[i] = static_cast<float>(static_cast<unsigned char>(buf[pos + i])) / 255.0f;
  }
  return image;
}

void write_ppm(const ImageTensor& image, const std::filesystem::path& path) {
  if (image.channels != 3) throw DataError("PPM output requires 3 channels");
  write_netpbm("P6", image, path);
}

void write_pgm(const ImageTensor& image, const std::filesystem::path& path) {
  if (image.channels != 1) throw DataError("PGM output requires 1 channel");
  write_netpbm("P5", image, path);
}

void write_pgm_bytes(std::size_t height, std::size_t width,
                     const std::vector<std::uint8_t>& bytes,
                     const std::filesystem::path& path) {
  if (bytes.size() != height * width) throw DataError("PGM payload size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

BinaryMap read_mask(const std::filesystem::path& path) {
  const ImageTensor img = read_netpbm(path);
  BinaryMap mask(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      mask.at(y, x) = img.at(y, x, 0) >= 0.5f ? 1 : 0;
    }
  }
  return mask;
}

void write_mask(const BinaryMap& mask, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(mask.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.data[i] ? 255 : 0;
  write_pgm_bytes(mask.height, mask.width, bytes, path);
}

}  // namespace dice
