#include <gtest/gtest.h>

#include <cmath>

#include "eogym/raster.hpp"
#include "eogym/rng.hpp"
#include "test_support.hpp"

using namespace eogym;

namespace {

// Pixel value encodes its own base coordinates so lookups can be checked directly.
RasterPatch coordinate_patch(int w, int h, std::string id = "base") {
    RasterPatch p = RasterPatch::filled(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            p.at(x, y, 0) = static_cast<float>(x) / w;
            p.at(x, y, 1) = static_cast<float>(y) / h;
            p.at(x, y, 2) = 0.5f;
        }
    p.provenance = Provenance{std::move(id), 0, 0, w, h};
    return p;
}

RasterPatch window(const RasterPatch& base, PixelWindow w) { return extract(base, w); }

BBox box(double x0, double y0, double x1, double y1) { return BBox{x0, y0, x1, y1, "", std::nullopt}; }

BBox random_box(Rng& rng, double extent) {
    const double x0 = rng.uniform(0, extent - 2), y0 = rng.uniform(0, extent - 2);
    return box(x0, y0, rng.uniform(x0 + 1, extent), rng.uniform(y0 + 1, extent));
}

}  // namespace

TEST(Patch, ValidateAndFilled) {
    auto p = RasterPatch::filled(4, 3, 3, 0.25f);
    EXPECT_EQ(p.pixels.size(), 36u);
    EXPECT_NO_THROW(p.validate());
    p.pixels.pop_back();
    EXPECT_THROW(p.validate(), Error);
    auto q = RasterPatch::filled(4, 3, 1);
    q.provenance = Provenance{"b", 2, 0, 5, 3};
    EXPECT_THROW(q.validate(), Error);
}

TEST(Crop, FullAoiIsIdentity) {
    const auto base = coordinate_patch(37, 23);
    EXPECT_EQ(crop_aoi(base, AOI{0, 0, 1, 1}), base);
}

TEST(Crop, CentralHalf) {
    const auto base = coordinate_patch(100, 100);
    const auto c = crop_aoi(base, AOI{0.25, 0.25, 0.75, 0.75});
    EXPECT_EQ(c.width, 50);
    EXPECT_EQ(c.height, 50);
    EXPECT_EQ(c.provenance->origin_x, 25);
    EXPECT_EQ(c.provenance->origin_y, 25);
    for (int y = 0; y < c.height; ++y)
        for (int x = 0; x < c.width; ++x) {
            EXPECT_EQ(c.at(x, y, 0), base.at(x + 25, y + 25, 0));
            EXPECT_EQ(c.at(x, y, 1), base.at(x + 25, y + 25, 1));
        }
}

TEST(Crop, DegenerateAoi) {
    const auto base = coordinate_patch(10, 10);
    for (const AOI& a : {AOI{0.6, 0, 0.4, 1}, AOI{0, 0.5, 1, 0.5}, AOI{-0.1, 0, 1, 1}, AOI{0, 0, 1.2, 1}}) {
        try {
            crop_aoi(base, a);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::degenerate_aoi);
        }
    }
}

TEST(Crop, WindowOracleAndProvenanceComposition) {
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
        const int w = static_cast<int>(rng.between(4, 80)), h = static_cast<int>(rng.between(4, 80));
        const auto base = coordinate_patch(w, h);
        const double x0 = rng.uniform(0, 0.9), y0 = rng.uniform(0, 0.9);
        const AOI a{x0, y0, rng.uniform(x0 + 0.05, 1.0), rng.uniform(y0 + 0.05, 1.0)};
        const auto win = aoi_window(a, w, h);
        EXPECT_EQ(win.x, static_cast<int>(std::floor(a.x0 * w)));
        EXPECT_EQ(win.x + win.width, std::min(w, static_cast<int>(std::ceil(a.x1 * w))));
        const auto c1 = crop_aoi(base, a);
        ASSERT_TRUE((PixelWindow{0, 0, w, h}.contains(win)));
        // Crop of a crop equals a single crop at the composed origin.
        const AOI b{0.1, 0.2, 0.9, 1.0};
        const auto inner = aoi_window(b, c1.width, c1.height);
        const auto c2 = crop_aoi(c1, b);
        const auto direct = extract(base, {win.x + inner.x, win.y + inner.y, inner.width, inner.height});
        EXPECT_EQ(c2, direct);
        EXPECT_EQ(c2.provenance->origin_x, win.x + inner.x);
    }
}

TEST(Pan, ClampsAtTopEdge) {
    const auto base = coordinate_patch(200, 200);
    const auto cur = window(base, {60, 0, 50, 50});
    const auto r = pan(base, cur, PanDirection::up);
    EXPECT_TRUE(r.clamped);
    EXPECT_EQ(r.patch.provenance->origin_y, 0);
    EXPECT_EQ(r.patch.provenance->origin_x, 60);
}

TEST(Pan, RightMovesHalfWidth) {
    const auto base = coordinate_patch(200, 200);
    const auto cur = window(base, {75, 75, 50, 50});
    const auto r = pan(base, cur, PanDirection::right);
    EXPECT_FALSE(r.clamped);
    EXPECT_EQ(r.patch.provenance->origin_x, 100);
    EXPECT_EQ(r.patch.provenance->origin_y, 75);
    EXPECT_EQ(r.patch.at(0, 0, 0), base.at(100, 75, 0));
    EXPECT_EQ(pan(base, r.patch, PanDirection::left).patch, cur);
}

TEST(Pan, RequiresProvenance) {
    const auto base = coordinate_patch(20, 20);
    auto cur = window(base, {0, 0, 10, 10});
    cur.provenance.reset();
    try {
        pan(base, cur, PanDirection::left);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::missing_provenance);
    }
}

TEST(Pan, RoundTripProperty) {
    Rng rng(5);
    const PanDirection opposite[] = {PanDirection::down, PanDirection::up, PanDirection::right, PanDirection::left};
    for (int i = 0; i < 1000; ++i) {
        const int bw = static_cast<int>(rng.between(20, 300)), bh = static_cast<int>(rng.between(20, 300));
        const int w = static_cast<int>(rng.between(1, bw)), h = static_cast<int>(rng.between(1, bh));
        const Provenance p{"b", static_cast<int>(rng.between(0, bw - w)), static_cast<int>(rng.between(0, bh - h)), bw, bh};
        const auto dir = static_cast<PanDirection>(rng.below(4));
        bool clamped = true;
        const auto moved = pan_window(p, w, h, dir, 0.5, &clamped);
        EXPECT_TRUE((PixelWindow{0, 0, bw, bh}.contains(moved)));
        if (clamped) continue;
        const Provenance q{"b", moved.x, moved.y, bw, bh};
        bool back_clamped = true;
        const auto back = pan_window(q, w, h, opposite[static_cast<int>(dir)], 0.5, &back_clamped);
        EXPECT_FALSE(back_clamped);
        EXPECT_EQ(back, (PixelWindow{p.origin_x, p.origin_y, w, h}));
    }
}

TEST(Zoom, FullBaseUnchanged) {
    const auto base = coordinate_patch(64, 48);
    const auto r = zoom_out(base, base, 2.0);
    EXPECT_EQ(r.patch, base);
    EXPECT_TRUE(r.clamped);
}

TEST(Zoom, DoublesAroundCenter) {
    const auto base = coordinate_patch(200, 200);
    const auto cur = window(base, {75, 75, 50, 50});
    const auto r = zoom_out(base, cur, 2.0);
    EXPECT_FALSE(r.clamped);
    EXPECT_EQ(r.patch.width, 100);
    EXPECT_EQ(r.patch.height, 100);
    EXPECT_EQ(r.patch.provenance->origin_x, 50);
    EXPECT_EQ(r.patch.provenance->origin_y, 50);
}

TEST(Zoom, ContainmentProperty) {
    Rng rng(6);
    for (int i = 0; i < 1000; ++i) {
        const int bw = static_cast<int>(rng.between(10, 300)), bh = static_cast<int>(rng.between(10, 300));
        const int w = static_cast<int>(rng.between(1, bw)), h = static_cast<int>(rng.between(1, bh));
        const Provenance p{"b", static_cast<int>(rng.between(0, bw - w)), static_cast<int>(rng.between(0, bh - h)), bw, bh};
        const auto z = zoom_window(p, w, h, rng.uniform(1.1, 4.0));
        EXPECT_TRUE((PixelWindow{0, 0, bw, bh}.contains(z)));
        EXPECT_TRUE(z.contains(PixelWindow{p.origin_x, p.origin_y, w, h}));
    }
    EXPECT_THROW(zoom_window(Provenance{"b", 0, 0, 10, 10}, 5, 5, 1.0), Error);
}

TEST(Boxes, NormalizeRoundTrip) {
    const std::vector<BBox> in{box(10, 10, 20, 20)};
    const auto out = normalize_bboxes(in, {100, 100}, {200, 200});
    EXPECT_EQ(out[0], box(20, 20, 40, 40));
    Rng rng(8);
    for (int i = 0; i < 1000; ++i) {
        const Dims a{static_cast<int>(rng.between(1, 4000)), static_cast<int>(rng.between(1, 4000))};
        const Dims b{static_cast<int>(rng.between(1, 4000)), static_cast<int>(rng.between(1, 4000))};
        const std::vector<BBox> v{random_box(rng, 1000)};
        const auto back = normalize_bboxes(normalize_bboxes(v, a, b), b, a);
        EXPECT_NEAR(back[0].x_min, v[0].x_min, 1e-9);
        EXPECT_NEAR(back[0].y_max, v[0].y_max, 1e-9);
    }
    EXPECT_THROW(normalize_bboxes(in, {0, 10}, {10, 10}), Error);
}

TEST(Boxes, IouKnownAndOracle) {
    EXPECT_DOUBLE_EQ(iou(box(0, 0, 10, 10), box(5, 5, 15, 15)), 25.0 / 175.0);
    EXPECT_EQ(iou(box(0, 0, 1, 1), box(2, 2, 3, 3)), 0.0);
    EXPECT_EQ(iou(box(0, 0, 4, 4), box(0, 0, 4, 4)), 1.0);
    // Integer boxes against unit-cell counting.
    Rng rng(9);
    for (int i = 0; i < 300; ++i) {
        auto ib = [&] {
            const int x0 = static_cast<int>(rng.between(0, 18)), y0 = static_cast<int>(rng.between(0, 18));
            return box(x0, y0, static_cast<int>(rng.between(x0 + 1, 20)), static_cast<int>(rng.between(y0 + 1, 20)));
        };
        const BBox a = ib(), b = ib();
        int inter = 0, uni = 0;
        for (int y = 0; y < 20; ++y)
            for (int x = 0; x < 20; ++x) {
                const bool ia = x >= a.x_min && x < a.x_max && y >= a.y_min && y < a.y_max;
                const bool ibb = x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max;
                inter += ia && ibb;
                uni += ia || ibb;
            }
        EXPECT_NEAR(iou(a, b), static_cast<double>(inter) / uni, 1e-12);
    }
}

TEST(Boxes, Compass) {
    EXPECT_EQ(compass_direction(1, 0), "right");
    EXPECT_EQ(compass_direction(0, -1), "above");
    EXPECT_EQ(compass_direction(0, 1), "below");
    EXPECT_EQ(compass_direction(-1, 0), "left");
    EXPECT_EQ(compass_direction(1, -1), "upper-right");
    EXPECT_EQ(compass_direction(-1, -1), "upper-left");
    EXPECT_EQ(compass_direction(-1, 1), "lower-left");
    EXPECT_EQ(compass_direction(1, 1), "lower-right");
    EXPECT_EQ(compass_direction(10, -3), "right");
}

TEST(Boxes, Relationship) {
    const Dims frame{100, 100};
    EXPECT_EQ(bbox_relationship(box(10, 10, 20, 20), box(10, 10, 20, 20), frame).direction, "contained");
    EXPECT_EQ(bbox_relationship(box(10, 10, 20, 20), box(40, 12, 50, 18), frame).direction, "right");
    EXPECT_EQ(bbox_relationship(box(10, 10, 20, 20), box(15, 15, 30, 30), frame).direction, "overlapping");
    EXPECT_EQ(bbox_relationship(box(10, 10, 20, 20), Point2{15, 15}, frame).direction, "contained");
    EXPECT_EQ(bbox_relationship(Point2{50, 50}, Point2{50, 10}, frame).direction, "above");
    EXPECT_THROW(bbox_relationship(box(5, 5, 1, 1), box(0, 0, 1, 1), frame), Error);
}

TEST(Boxes, ContainedImpliesPositiveIouAndAntisymmetry) {
    Rng rng(10);
    const Dims frame{500, 500};
    for (int i = 0; i < 1000; ++i) {
        const BBox a = random_box(rng, 500), b = random_box(rng, 500);
        const auto ab = bbox_relationship(a, b, frame);
        const auto ba = bbox_relationship(b, a, frame);
        if (ab.direction == "contained") EXPECT_GT(ab.iou, 0.0);
        EXPECT_EQ(ab.iou, ba.iou);
        EXPECT_EQ(ab.dx, -ba.dx);
        if (ab.direction != "contained" && ab.direction != "overlapping")
            EXPECT_EQ(ba.direction, compass_direction(-ab.dx, -ab.dy));
    }
}

TEST(Masks, RelationsAndDirection) {
    auto a = BinaryMask::empty(20, 20), b = BinaryMask::empty(20, 20);
    EXPECT_EQ(mask_relationship(a, b).relation, "both_empty");
    EXPECT_EQ(mask_relationship(a, b).direction, "undefined");
    a.fill_box(box(0, 0, 10, 10));
    EXPECT_EQ(a.count(), 100u);
    b.fill_box(box(2, 2, 5, 5));
    auto r = mask_relationship(a, b);
    EXPECT_EQ(r.relation, "contains");
    EXPECT_EQ(r.direction, "upper-left");
    EXPECT_EQ(mask_relationship(b, a).relation, "contained_by");
    EXPECT_EQ(mask_relationship(a, a).relation, "equal");
    auto c = BinaryMask::empty(20, 20);
    c.fill_box(box(12, 0, 20, 10));
    EXPECT_EQ(mask_relationship(a, c).relation, "disjoint");
    EXPECT_EQ(mask_relationship(a, c).direction, "right");
    EXPECT_THROW(mask_relationship(a, BinaryMask::empty(10, 10)), Error);
}

TEST(Masks, IouMatchesPixelCount) {
    Rng rng(12);
    for (int i = 0; i < 200; ++i) {
        auto a = BinaryMask::empty(32, 24), b = BinaryMask::empty(32, 24);
        for (auto& v : a.bits) v = rng.bernoulli(0.3);
        for (auto& v : b.bits) v = rng.bernoulli(0.5);
        std::size_t inter = 0, uni = 0;
        for (std::size_t k = 0; k < a.bits.size(); ++k) {
            inter += a.bits[k] && b.bits[k];
            uni += a.bits[k] || b.bits[k];
        }
        const auto r = mask_relationship(a, b);
        EXPECT_EQ(r.intersection, inter);
        EXPECT_EQ(r.union_count, uni);
        if (uni) EXPECT_DOUBLE_EQ(r.iou, static_cast<double>(inter) / uni);
    }
}

TEST(PatchIo, RoundTrip) {
    const auto dir = eogym::testing::temp_dir("raster");
    auto p = coordinate_patch(7, 5);
    p.provenance.reset();
    write_patch(dir / "p.bin", p);
    EXPECT_EQ(read_patch(dir / "p.bin"), p);
    write_pnm(dir / "p.ppm", p);
    EXPECT_TRUE(std::filesystem::file_size(dir / "p.ppm") > 7u * 5u * 3u);
    EXPECT_THROW(read_patch(dir / "missing.bin"), Error);
}
