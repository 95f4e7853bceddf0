#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "cws/color.hpp"
#include "cws/rng.hpp"

using namespace cws;

namespace {

ImageU8 solid(int h, int w, uint8_t r, uint8_t g, uint8_t b) {
    ImageU8 img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
    return img;
}

ImageU8 random_image(int h, int w, std::mt19937_64& rng) {
    ImageU8 img(h, w);
    std::uniform_int_distribution<int> d(0, 255);
    for (auto& v : img.data) v = static_cast<uint8_t>(d(rng));
    return img;
}

// independent CIELAB oracle: direct evaluation of the documented conversion
double lab_a_oracle(uint8_t r8, uint8_t g8, uint8_t b8) {
    auto lin = [](double v) {
        v /= 255.0;
        return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
    };
    double r = lin(r8), g = lin(g8), b = lin(b8);
    double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    auto f = [](double t) {
        return t > 0.008856451679035631 ? std::cbrt(t) : 7.787037037037035 * t + 16.0 / 116.0;
    };
    return 500.0 * (f(x) - f(y)) + 128.0;
}

}  // namespace

TEST_CASE("YCrCb Y plane basics") {
    Plane white = rgb_to_ycrcb_y(solid(3, 4, 255, 255, 255));
    for (double v : white.data) CHECK_THAT(v, Catch::Matchers::WithinAbs(255.0, 1e-9));

    Plane black = rgb_to_ycrcb_y(solid(3, 4, 0, 0, 0));
    for (double v : black.data) CHECK(v == 0.0);

    // single red pixel, direct evaluation of the BT.601 matrix row
    Plane red = rgb_to_ycrcb_y(solid(1, 1, 255, 0, 0));
    CHECK_THAT(red.at(0, 0), Catch::Matchers::WithinAbs(0.299 * 255.0, 1e-9));
}

TEST_CASE("CIELAB A plane conventions") {
    Plane grey = rgb_to_lab_a(solid(2, 2, 128, 128, 128));
    for (double v : grey.data) CHECK_THAT(v, Catch::Matchers::WithinAbs(128.0, 1.0));

    Plane black = rgb_to_lab_a(solid(2, 2, 0, 0, 0));
    for (double v : black.data) CHECK_THAT(v, Catch::Matchers::WithinAbs(128.0, 1.0));

    Plane red = rgb_to_lab_a(solid(1, 1, 255, 0, 0));
    CHECK(red.at(0, 0) > 128.0);
    CHECK_THAT(red.at(0, 0), Catch::Matchers::WithinAbs(lab_a_oracle(255, 0, 0), 1e-6));

    auto rng = make_rng(211);
    ImageU8 img = random_image(4, 5, rng);
    Plane a = rgb_to_lab_a(img);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x)
            CHECK_THAT(a.at(y, x), Catch::Matchers::WithinAbs(
                                       lab_a_oracle(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)), 1e-6));
}

TEST_CASE("achromatic images give constant A plane near 128") {
    for (int v : {0, 37, 128, 200, 255}) {
        Plane a = rgb_to_lab_a(solid(3, 3, static_cast<uint8_t>(v), static_cast<uint8_t>(v), static_cast<uint8_t>(v)));
        for (double p : a.data) CHECK_THAT(p, Catch::Matchers::WithinAbs(128.0, 1.0));
    }
}

TEST_CASE("exaggerated luminance on a grey ramp") {
    // pixels with l = 0, 128, 255; exponent 5
    ImageU8 img(1, 3);
    for (int c = 0; c < 3; ++c) {
        img.at(0, 0, c) = 0;
        img.at(0, 1, c) = 128;
        img.at(0, 2, c) = 255;
    }
    Plane ey = derive_ey(img, EyConfig{5, false});
    CHECK_THAT(ey.at(0, 0), Catch::Matchers::WithinAbs(0.0, 1e-9));
    // direct evaluation: 255 * (128/255)^5
    CHECK_THAT(ey.at(0, 1), Catch::Matchers::WithinAbs(8.13, 0.01));
    CHECK_THAT(ey.at(0, 2), Catch::Matchers::WithinAbs(255.0, 1e-9));
}

TEST_CASE("exponent 1 returns normalised luminance unchanged") {
    auto rng = make_rng(223);
    ImageU8 img = random_image(6, 6, rng);
    Plane e1 = derive_ey(img, EyConfig{1, false});
    // oracle: raw BT.709 luminance rescaled so its max is 255
    double mx = 0;
    Plane l(6, 6);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) {
            l.at(y, x) = 0.2126 * img.at(y, x, 0) + 0.7152 * img.at(y, x, 1) + 0.0722 * img.at(y, x, 2);
            mx = std::max(mx, l.at(y, x));
        }
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
            CHECK_THAT(e1.at(y, x), Catch::Matchers::WithinAbs(255.0 * l.at(y, x) / mx, 1e-9));
}

TEST_CASE("swap_rb exchanges the R and B coefficients") {
    // single pixel: l is its own maximum, so ey = 255 either way; check the
    // raw weighting through a two-pixel image instead
    ImageU8 img(1, 2);
    img.at(0, 0, 0) = 255;  // pure red pixel
    img.at(0, 1, 1) = 255;  // pure green pixel = reference maximum
    Plane normal = derive_ey(img, EyConfig{1, false});
    Plane swapped = derive_ey(img, EyConfig{1, true});
    // l(red)/l(green) = 0.2126/0.7152 normally, 0.0722/0.7152 swapped
    CHECK_THAT(normal.at(0, 0), Catch::Matchers::WithinAbs(255.0 * 0.2126 / 0.7152, 1e-9));
    CHECK_THAT(swapped.at(0, 0), Catch::Matchers::WithinAbs(255.0 * 0.0722 / 0.7152, 1e-9));
}

TEST_CASE("all-black image yields all-zero eY without dividing by zero") {
    Plane ey = derive_ey(solid(4, 4, 0, 0, 0), EyConfig{5, false});
    for (double v : ey.data) CHECK(v == 0.0);
}

TEST_CASE("eY maximum is 255 and the map is monotone in l") {
    auto rng = make_rng(227);
    for (int trial = 0; trial < 50; ++trial) {
        ImageU8 img = random_image(8, 8, rng);
        EyConfig cfg{5, trial % 2 == 1};
        Plane ey = derive_ey(img, cfg);
        double mx = *std::max_element(ey.data.begin(), ey.data.end());
        CHECK_THAT(mx, Catch::Matchers::WithinAbs(255.0, 1e-3));

        // monotone: recompute l and compare orderings on a sample of pairs
        double wr = cfg.swap_rb ? 0.0722 : 0.2126, wb = cfg.swap_rb ? 0.2126 : 0.0722;
        for (int k = 0; k + 1 < 16; ++k) {
            int i = k * 3 % 64, j = (k * 7 + 5) % 64;
            auto lum = [&](int idx) {
                int y = idx / 8, x = idx % 8;
                return wr * img.at(y, x, 0) + 0.7152 * img.at(y, x, 1) + wb * img.at(y, x, 2);
            };
            double li = lum(i), lj = lum(j);
            double ei = ey.data[static_cast<size_t>(i)], ej = ey.data[static_cast<size_t>(j)];
            if (li <= lj) CHECK(ei <= ej + 1e-12);
            if (lj <= li) CHECK(ej <= ei + 1e-12);
        }
    }
}

TEST_CASE("merge_channels at full capture resolution") {
    auto rng = make_rng(228);
    ImageU8 img = random_image(480, 640, rng);
    MergedTensor m = merge_channels(img, ChannelMode::RGB_Y_A);
    CHECK(m.data.shape() == Shape{5, 480, 640});
}

TEST_CASE("merge_channels channel counts follow the mode table") {
    auto rng = make_rng(229);
    ImageU8 img = random_image(6, 8, rng);
    CHECK(merge_channels(img, ChannelMode::RGB).data.shape() == Shape{3, 6, 8});
    CHECK(merge_channels(img, ChannelMode::RGB_A).data.shape() == Shape{4, 6, 8});
    CHECK(merge_channels(img, ChannelMode::RGB_Y).data.shape() == Shape{4, 6, 8});
    CHECK(merge_channels(img, ChannelMode::RGB_Y_A).data.shape() == Shape{5, 6, 8});
    CHECK(merge_channels(img, ChannelMode::RGB_EY).data.shape() == Shape{4, 6, 8});
    CHECK(merge_channels(img, ChannelMode::RGB_EY_A).data.shape() == Shape{5, 6, 8});

    MergedTensor m = merge_channels(img, ChannelMode::RGB_Y_A);
    CHECK(m.channels == std::vector<std::string>{"R", "G", "B", "Y", "A"});
}

TEST_CASE("first three merged channels equal img/255 and all values lie in [0,1]") {
    auto rng = make_rng(233);
    ImageU8 img = random_image(5, 7, rng);
    for (ChannelMode mode : {ChannelMode::RGB, ChannelMode::RGB_Y_A, ChannelMode::RGB_EY_A}) {
        MergedTensor m = merge_channels(img, mode, EyConfig{5, true});
        CHECK(m.data.min_value() >= 0.0);
        CHECK(m.data.max_value() <= 1.0);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 5; ++y)
                for (int x = 0; x < 7; ++x)
                    CHECK(m.data[(static_cast<int64_t>(c) * 5 + y) * 7 + x] == img.at(y, x, c) / 255.0);
    }
}

TEST_CASE("RGB mode is a pure passthrough") {
    auto rng = make_rng(239);
    ImageU8 img = random_image(4, 4, rng);
    MergedTensor m = merge_channels(img, ChannelMode::RGB);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x)
                CHECK(m.data[(static_cast<int64_t>(c) * 4 + y) * 4 + x] == img.at(y, x, c) / 255.0);
}

TEST_CASE("channel mode parsing") {
    CHECK(parse_channel_mode("RGB+eY") == ChannelMode::RGB_EY);
    CHECK(parse_channel_mode("RGB+Y+A") == ChannelMode::RGB_Y_A);
    CHECK_THROWS(parse_channel_mode("RGB+Q"));
}

TEST_CASE("plane_absdiff basics") {
    Plane a(2, 2, 255.0), b(2, 2, 0.0);
    Plane d = plane_absdiff(a, b);
    for (double v : d.data) CHECK(v == 255.0);
    Plane z = plane_absdiff(a, a);
    for (double v : z.data) CHECK(v == 0.0);

    Plane c(3, 2);
    CHECK_THROWS(plane_absdiff(a, c));
}

TEST_CASE("plane_absdiff is symmetric and localises R/B differences") {
    auto rng = make_rng(241);
    ImageU8 img = random_image(6, 6, rng);
    // row 0 is white so both configs share the same luminance maximum;
    // rows 1-2 strongly red-vs-blue asymmetric; rows 3-5 symmetric (R == B)
    for (int x = 0; x < 6; ++x)
        for (int c = 0; c < 3; ++c) img.at(0, x, c) = 255;
    for (int y = 1; y < 3; ++y)
        for (int x = 0; x < 6; ++x) {
            img.at(y, x, 0) = 250;
            img.at(y, x, 1) = 180;
            img.at(y, x, 2) = 5;
        }
    for (int y = 3; y < 6; ++y)
        for (int x = 0; x < 6; ++x) {
            img.at(y, x, 0) = 90;
            img.at(y, x, 2) = 90;
        }
    Plane e = derive_ey(img, EyConfig{5, false});
    Plane es = derive_ey(img, EyConfig{5, true});
    Plane d1 = plane_absdiff(e, es), d2 = plane_absdiff(es, e);
    for (int64_t i = 0; i < d1.size(); ++i) CHECK(d1.data[static_cast<size_t>(i)] == d2.data[static_cast<size_t>(i)]);

    // oracle: elementwise subtraction
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
            CHECK_THAT(d1.at(y, x), Catch::Matchers::WithinAbs(std::abs(e.at(y, x) - es.at(y, x)), 1e-12));

    // with a shared maximum the R==B region differences vanish exactly while
    // the R!=B region stays nonzero
    double asym = 0, sym = 0;
    for (int x = 0; x < 6; ++x) {
        asym += d1.at(1, x);
        sym += d1.at(4, x);
    }
    CHECK(sym < 1e-12);
    CHECK(asym > 1.0);
}
