#include "f2v/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace f2v {

Tensor read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) throw IoError("cannot decode image: " + path.string());
  const double scale = img.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  cv::Mat f;
  img.convertTo(f, CV_64F, scale);
  const int channels = f.channels();
  if (channels == 1) {
    Tensor t(1, f.rows, f.cols);
    for (int y = 0; y < f.rows; ++y)
      for (int x = 0; x < f.cols; ++x) t.at(0, y, x) = f.at<double>(y, x);
    return t;
  }
  if (channels != 3 && channels != 4)
    throw IoError("unsupported channel count in " + path.string());
  // OpenCV stores BGR(A); the alpha plane is dropped.
  std::vector<cv::Mat> planes;
  cv::split(f, planes);
  Tensor t(3, f.rows, f.cols);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < f.rows; ++y)
      for (int x = 0; x < f.cols; ++x) t.at(ch, y, x) = planes[static_cast<std::size_t>(2 - ch)].at<double>(y, x);
  return t;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  require(image.c == 1 || image.c == 3, "write_png: expected 1 or 3 channels, got " + image.shape_str());
  auto to_u8 = [](double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  cv::Mat out(image.h, image.w, image.c == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x) {
      if (image.c == 1) {
        out.at<unsigned char>(y, x) = to_u8(image.at(0, y, x));
      } else {
        auto& px = out.at<cv::Vec3b>(y, x);
        for (int ch = 0; ch < 3; ++ch) px[2 - ch] = to_u8(image.at(ch, y, x));
      }
    }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) throw IoError("cannot write image: " + path.string());
}

}  // namespace f2v
