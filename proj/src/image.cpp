#include "d3ssl/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "d3ssl/error.hpp"

namespace d3ssl::image {

namespace {

cv::Mat plane_view(Tensor& t, int c)
{
    return cv::Mat(t.height(), t.width(), CV_32F, t.plane(c).data());
}

cv::Mat plane_view(const Tensor& t, int c)
{
    return cv::Mat(t.height(), t.width(), CV_32F, const_cast<float*>(t.plane(c).data()));
}

} // namespace

Tensor resize(const Tensor& src, int out_w, int out_h)
{
    if (src.empty() || out_w <= 0 || out_h <= 0)
        throw ShapeError("resize: empty source or target");
    Tensor dst(src.channels(), out_h, out_w);
    for (int c = 0; c < src.channels(); ++c)
    {
        cv::Mat out = plane_view(dst, c);
        cv::resize(plane_view(src, c), out, out.size(), 0, 0, cv::INTER_LINEAR);
    }
    return dst;
}

Tensor crop_resize(const Tensor& src, const geometry::BBox& crop, int out_w, int out_h)
{
    const int x = static_cast<int>(std::lround(crop.x1));
    const int y = static_cast<int>(std::lround(crop.y1));
    const int w = static_cast<int>(std::lround(crop.x2)) - x;
    const int h = static_cast<int>(std::lround(crop.y2)) - y;
    if (w <= 0 || h <= 0 || x < 0 || y < 0 || x + w > src.width() || y + h > src.height())
        throw ShapeError("crop " + crop.to_string() + " outside image " + src.shape_string());
    Tensor dst(src.channels(), out_h, out_w);
    const cv::Rect roi(x, y, w, h);
    for (int c = 0; c < src.channels(); ++c)
    {
        cv::Mat out = plane_view(dst, c);
        cv::resize(plane_view(src, c)(roi), out, out.size(), 0, 0, cv::INTER_LINEAR);
    }
    return dst;
}

Tensor downsample2x(const Tensor& src)
{
    if (src.width() % 2 != 0 || src.height() % 2 != 0)
        throw ShapeError("downsample2x needs even dimensions, got " + src.shape_string());
    Tensor dst(src.channels(), src.height() / 2, src.width() / 2);
    for (int c = 0; c < src.channels(); ++c)
        for (int y = 0; y < dst.height(); ++y)
            for (int x = 0; x < dst.width(); ++x)
                dst.at(c, y, x) = 0.25f * (src.at(c, 2 * y, 2 * x) + src.at(c, 2 * y, 2 * x + 1) +
                                           src.at(c, 2 * y + 1, 2 * x) + src.at(c, 2 * y + 1, 2 * x + 1));
    return dst;
}

void paste(const Tensor& src, Tensor& dst, int x0, int y0)
{
    if (src.channels() != dst.channels())
        throw ShapeMismatch("paste: channel count differs");
    for (int c = 0; c < src.channels(); ++c)
        for (int y = 0; y < src.height(); ++y)
        {
            const int dy = y0 + y;
            if (dy < 0 || dy >= dst.height())
                continue;
            for (int x = 0; x < src.width(); ++x)
            {
                const int dx = x0 + x;
                if (dx >= 0 && dx < dst.width())
                    dst.at(c, dy, dx) = src.at(c, y, x);
            }
        }
}

Tensor load_png(const std::filesystem::path& path)
{
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty())
        throw MissingImage("cannot read image " + path.string());
    Tensor t(3, bgr.rows, bgr.cols);
    for (int y = 0; y < bgr.rows; ++y)
        for (int x = 0; x < bgr.cols; ++x)
        {
            const auto px = bgr.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c)
                t.at(c, y, x) = px[2 - c] / 255.0f;
        }
    return t;
}

void save_png(const Tensor& img, const std::filesystem::path& path)
{
    if (img.channels() != 1 && img.channels() != 3)
        throw ShapeError("save_png expects 1 or 3 channels");
    cv::Mat bgr(img.height(), img.width(), CV_8UC3);
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
        {
            cv::Vec3b px;
            for (int c = 0; c < 3; ++c)
            {
                const float v = img.at(img.channels() == 1 ? 0 : c, y, x);
                px[2 - c] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            }
            bgr.at<cv::Vec3b>(y, x) = px;
        }
    if (!cv::imwrite(path.string(), bgr))
        throw DataError("cannot write " + path.string());
}

Tensor mask_to_image(const geometry::Mask& m)
{
    Tensor t(1, m.height(), m.width());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
            t.at(0, y, x) = m.at(x, y);
    return t;
}

} // namespace d3ssl::image
