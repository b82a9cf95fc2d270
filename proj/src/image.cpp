#include "progdit/image.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "progdit/errors.hpp"

namespace progdit {

void write_pgm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("pgm: cannot open " + path + " for writing");
  os << "P5\n" << img.w << " " << img.h << "\n255\n";
  for (double v : img.px) {
    const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  if (!os) throw DataError("pgm: write failed for " + path);
}

Image read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("pgm: cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5") throw DataError("pgm: " + path + " is not binary P5");
  int64_t w = 0, h = 0, maxv = 0;
  is >> w >> h >> maxv;
  if (!is || w <= 0 || h <= 0 || maxv != 255)
    throw DataError("pgm: unsupported header in " + path);
  is.get();  // single whitespace after maxval
  Image img = Image::zeros(h, w);
  std::vector<unsigned char> buf(static_cast<size_t>(w * h));
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw DataError("pgm: truncated payload in " + path);
  for (size_t i = 0; i < buf.size(); ++i) img.px[i] = static_cast<double>(buf[i]) / 255.0;
  return img;
}

Tensor image_to_tensor(const Image& img, DType dt) {
  return Tensor::from_values({1, img.h, img.w}, img.px, dt);
}

Image tensor_to_image(const Tensor& t, bool clamp01) {
  int64_t h = 0, w = 0;
  if (t.rank() == 3 && t.dim(0) == 1) {
    h = t.dim(1);
    w = t.dim(2);
  } else if (t.rank() == 2) {
    h = t.dim(0);
    w = t.dim(1);
  } else {
    throw std::invalid_argument("tensor_to_image: want [1,H,W] or [H,W]");
  }
  Image img = Image::zeros(h, w);
  for (int64_t i = 0; i < t.numel(); ++i) {
    double v = t.value_at(i);
    if (clamp01) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    img.px[static_cast<size_t>(i)] = v;
  }
  return img;
}

}  // namespace progdit
