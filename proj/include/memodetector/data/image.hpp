#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "memodetector/data/manifest.hpp"
#include "memodetector/error.hpp"
#include "memodetector/hash.hpp"

namespace memodetector::data {

/// Decoded 8-bit RGB image, row-major, interleaved.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
    /// sha256 of the encoded source bytes; keys precomputed features.
    std::string digest;

    std::uint8_t* at(int x, int y) { return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
    const std::uint8_t* at(int x, int y) const {
        return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
    }
};

/// Raw bytes of a meme's image, from a data URI or a file.
inline std::vector<std::uint8_t> read_image_bytes(const std::filesystem::path& base_dir,
                                                  const MemeInstance& meme) {
    constexpr std::string_view data_prefix = "data:";
    std::string_view ref = meme.image;
    if (ref.starts_with(data_prefix)) {
        const auto comma = ref.find(',');
        if (comma == std::string_view::npos || ref.substr(0, comma).find(";base64") == std::string_view::npos)
            throw InputError("meme '" + meme.id + "': image data URI must be base64");
        return base64_decode(ref.substr(comma + 1));
    }
    std::filesystem::path path(meme.image);
    if (path.is_relative()) path = base_dir / path;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("meme '" + meme.id + "': cannot open image " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Sniffs the container format; empty string if unrecognised.
inline std::string image_mime_type(std::span<const std::uint8_t> bytes) {
    auto starts = [&](std::initializer_list<std::uint8_t> sig) {
        return bytes.size() >= sig.size() && std::equal(sig.begin(), sig.end(), bytes.begin());
    };
    if (starts({0x89, 'P', 'N', 'G'})) return "image/png";
    if (starts({0xff, 0xd8, 0xff})) return "image/jpeg";
    if (starts({'G', 'I', 'F', '8'})) return "image/gif";
    if (bytes.size() >= 12 && starts({'R', 'I', 'F', 'F'}) && bytes[8] == 'W' && bytes[9] == 'E' &&
        bytes[10] == 'B' && bytes[11] == 'P')
        return "image/webp";
    if (starts({'B', 'M'})) return "image/bmp";
    return "";
}

inline RgbImage decode_rgb(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw InputError("empty image data");
    cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
    cv::Mat bgr;
    try {
        bgr = cv::imdecode(raw, cv::IMREAD_COLOR);
    } catch (const cv::Exception& e) {
        throw InputError(std::string("image decode failed: ") + e.what());
    }
    if (bgr.empty()) throw InputError("image data is not decodable");
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    RgbImage img;
    img.width = rgb.cols;
    img.height = rgb.rows;
    img.pixels.assign(rgb.data, rgb.data + rgb.total() * 3);
    img.digest = sha256_hex(bytes);
    return img;
}

inline RgbImage load_rgb(const std::filesystem::path& base_dir, const MemeInstance& meme) {
    const auto bytes = read_image_bytes(base_dir, meme);
    try {
        return decode_rgb(bytes);
    } catch (const InputError& e) {
        throw InputError("meme '" + meme.id + "': " + e.what());
    }
}

/// Area-averaging resize; the source digest is preserved.
inline RgbImage resize(const RgbImage& img, int width, int height) {
    if (img.width == width && img.height == height) return img;
    cv::Mat src(img.height, img.width, CV_8UC3, const_cast<std::uint8_t*>(img.pixels.data()));
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(width, height), 0, 0, cv::INTER_AREA);
    RgbImage out;
    out.width = width;
    out.height = height;
    out.pixels.assign(dst.data, dst.data + dst.total() * 3);
    out.digest = img.digest;
    return out;
}

inline std::vector<std::uint8_t> encode_png(const RgbImage& img) {
    cv::Mat rgb(img.height, img.width, CV_8UC3, const_cast<std::uint8_t*>(img.pixels.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    std::vector<std::uint8_t> out;
    if (!cv::imencode(".png", bgr, out)) throw Error("PNG encoding failed");
    return out;
}

}  // namespace memodetector::data
