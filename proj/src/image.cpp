#include "osteo/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace osteo {

namespace {

cv::Mat to_mat(const GrayImage& img) {
  cv::Mat m(img.height, img.width, CV_32F);
  std::copy(img.pixels.begin(), img.pixels.end(), m.ptr<float>());
  return m;
}

GrayImage from_mat(const cv::Mat& m) {
  GrayImage img(m.cols, m.rows);
  if (m.isContinuous()) {
    std::copy(m.ptr<float>(), m.ptr<float>() + img.size(), img.pixels.begin());
  } else {
    for (int y = 0; y < m.rows; ++y)
      std::copy(m.ptr<float>(y), m.ptr<float>(y) + m.cols, img.pixels.begin() + (size_t)y * m.cols);
  }
  return img;
}

}  // namespace

GrayImage load_png(const std::string& path) {
  cv::Mat raw = cv::imread(path, cv::IMREAD_UNCHANGED | cv::IMREAD_ANYDEPTH);
  if (raw.empty()) throw ImageError("cannot read image: " + path);
  if (raw.channels() != 1) throw ImageError("expected single-channel image: " + path);
  cv::Mat f;
  if (raw.depth() == CV_8U) {
    raw.convertTo(f, CV_32F, 1.0 / 255.0);
  } else if (raw.depth() == CV_16U) {
    raw.convertTo(f, CV_32F, 1.0 / 65535.0);
  } else {
    throw ImageError("unsupported bit depth (want 8 or 16): " + path);
  }
  return from_mat(f);
}

void save_png(const GrayImage& img, const std::string& path) {
  cv::Mat f = to_mat(img);
  cv::Mat u16;
  f.convertTo(u16, CV_16U, 65535.0);
  if (!cv::imwrite(path, u16)) throw ImageError("cannot write image: " + path);
}

BinaryMask load_mask_png(const std::string& path) {
  cv::Mat raw = cv::imread(path, cv::IMREAD_UNCHANGED | cv::IMREAD_ANYDEPTH);
  if (raw.empty()) throw ImageError("cannot read mask: " + path);
  if (raw.channels() != 1) throw ImageError("expected single-channel mask: " + path);
  BinaryMask mask(raw.cols, raw.rows);
  for (int y = 0; y < raw.rows; ++y)
    for (int x = 0; x < raw.cols; ++x) {
      double v = raw.depth() == CV_8U ? raw.at<uint8_t>(y, x)
                                      : static_cast<double>(raw.at<uint16_t>(y, x));
      mask.at(y, x) = v > 0 ? 1 : 0;
    }
  return mask;
}

void save_mask_png(const BinaryMask& mask, const std::string& path) {
  cv::Mat m(mask.height, mask.width, CV_8U);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) m.at<uint8_t>(y, x) = mask.at(y, x) ? 255 : 0;
  if (!cv::imwrite(path, m)) throw ImageError("cannot write mask: " + path);
}

GrayImage resize_bilinear(const GrayImage& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw ImageError("resize target must be positive");
  cv::Mat out;
  cv::resize(to_mat(img), out, cv::Size(out_w, out_h), 0, 0, cv::INTER_LINEAR);
  return from_mat(out);
}

GrayImage rotate_about_center(const GrayImage& img, double degrees) {
  cv::Mat src = to_mat(img);
  cv::Point2f center(img.width / 2.0f, img.height / 2.0f);
  cv::Mat rot = cv::getRotationMatrix2D(center, degrees, 1.0);
  cv::Mat out;
  cv::warpAffine(src, out, rot, src.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                 cv::Scalar(0));
  return from_mat(out);
}

GrayImage flip_horizontal(const GrayImage& img) {
  cv::Mat out;
  cv::flip(to_mat(img), out, 1);
  return from_mat(out);
}

GrayImage flip_vertical(const GrayImage& img) {
  cv::Mat out;
  cv::flip(to_mat(img), out, 0);
  return from_mat(out);
}

GrayImage crop_rect(const GrayImage& img, int x, int y, int w, int h) {
  if (x < 0 || y < 0 || w < 1 || h < 1 || x + w > img.width || y + h > img.height)
    throw ImageError("crop rectangle out of bounds");
  GrayImage out(w, h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out.at(r, c) = img.at(y + r, x + c);
  return out;
}

}  // namespace osteo
