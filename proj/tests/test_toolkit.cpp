#include <gtest/gtest.h>

#include "eogym/toolkit.hpp"
#include "test_support.hpp"

using namespace eogym;
using nlohmann::json;

namespace {

BBox box(double x0, double y0, double x1, double y1, std::string label = {}) {
    return BBox{x0, y0, x1, y1, std::move(label), std::nullopt};
}

// One 100x100 optical image with three ships and two cars, plus a SAR companion with two ships.
struct MiniLake {
    std::filesystem::path dir = eogym::testing::temp_dir("toolkit");
    std::shared_ptr<DataLakeIndex> index;
    std::shared_ptr<AnnotationStore> ann = std::make_shared<AnnotationStore>();

    MiniLake() {
        std::filesystem::create_directories(dir / "images");
        DataLakeRecord opt{.record_id = "opt-1", .modality = Modality::optical_rgb, .companion_id = "sar-1",
                           .path = "images/opt-1.bin"};
        DataLakeRecord sar{.record_id = "sar-1", .modality = Modality::sar, .companion_id = "opt-1",
                           .path = "images/sar-1.bin"};
        write_patch(dir / opt.path, RasterPatch::filled(100, 100, 3, 0.3f));
        write_patch(dir / sar.path, RasterPatch::filled(100, 100, 1, 0.2f));
        auto built = build_index({opt, sar}, dir);
        EXPECT_TRUE(built.violations.empty());
        index = std::make_shared<DataLakeIndex>(std::move(built.index));
        ann->add({"opt-1", "harbor",
                  {{"ship", box(5, 5, 15, 15, "ship"), {}, "white"},
                   {"ship", box(30, 10, 45, 20, "ship"), {}, "gray"},
                   {"ship", box(60, 60, 80, 70, "ship"), {}, "white"},
                   {"car", box(85, 85, 90, 90, "car"), {}, "red"},
                   {"car", box(70, 85, 75, 90, "car"), {}, "blue"}}});
        ann->add({"sar-1", std::nullopt,
                  {{"ship", box(5, 5, 15, 15, "ship"), {}, {}}, {"ship", box(61, 60, 80, 70, "ship"), {}, {}}}});
    }

    Toolkit toolkit(NoisyOracleDetector::Params p = {}) const {
        return Toolkit(index, ann, std::make_shared<SynonymFilter>(), std::make_shared<NoisyOracleDetector>(p));
    }
};

const MiniLake& lake() {
    static const MiniLake l;
    return l;
}

Observation run(const Toolkit& tk, EpisodeContext& ctx, const std::string& name, const json& args,
                int index = 0, ExecutionMode mode = {}) {
    return tk.execute({name, args.dump(), index}, ctx, mode);
}

}  // namespace

TEST(Catalog, SizesAndGroups) {
    EXPECT_EQ(tool_catalog().size(), 35u);
    std::size_t gathering = 0;
    for (const auto& s : tool_catalog()) gathering += is_gathering(s.group);
    EXPECT_EQ(gathering, 15u);
    const std::map<DatasetFamily, std::size_t> expected = {
        {DatasetFamily::multispectral, 15}, {DatasetFamily::fmow, 12}, {DatasetFamily::fair1m, 11},
        {DatasetFamily::dior, 10},          {DatasetFamily::dota, 10}, {DatasetFamily::xview, 10},
        {DatasetFamily::xbd, 9},            {DatasetFamily::m4sar, 7}, {DatasetFamily::sardet, 5}};
    for (auto [family, n] : expected) {
        EXPECT_EQ(skill_tools(family).size(), n) << to_string(family);
        EXPECT_EQ(schema_set(family, SchemaMode::skill, false).size(), n);
        EXPECT_EQ(schema_set(family, SchemaMode::all, false).size(), 35u);
        for (const auto& name : skill_tools(family)) EXPECT_NE(find_tool(name), nullptr) << name;
    }
    EXPECT_THROW(parse_dataset_family("landsat"), Error);
}

TEST(Catalog, RenameExamplesAndInverse) {
    EXPECT_EQ(rename_tool_name("get_object_bbox_by_sar_image").name, "access_object_bbox_by_sar_image");
    EXPECT_EQ(rename_tool_name("basic_calculator").name, "simple_calculator");
    std::set<std::string> aliases;
    for (const auto& s : tool_catalog()) {
        const auto r = rename_tool_name(s.name);
        EXPECT_TRUE(r.mapped) << s.name;
        EXPECT_NE(r.name, s.name);
        EXPECT_EQ(inverse_rename_tool_name(r.name).name, s.name);
        aliases.insert(r.name);
        const auto renamed = rename_schema(s);
        EXPECT_EQ(renamed.params, s.params);
        EXPECT_EQ(renamed.description, s.description);
    }
    EXPECT_EQ(aliases.size(), 35u);
    EXPECT_FALSE(inverse_rename_tool_name("teleport_satellite").mapped);
}

TEST(Catalog, FunctionManifestShape) {
    const auto m = function_manifest(schema_set(DatasetFamily::sardet, SchemaMode::skill, true));
    ASSERT_EQ(m.size(), 5u);
    for (const auto& f : m) {
        EXPECT_EQ(f["type"], "function");
        EXPECT_EQ(f["function"]["parameters"]["type"], "object");
        EXPECT_TRUE(inverse_rename_tool_name(f["function"]["name"].get<std::string>()).mapped);
    }
}

TEST(Calculator, Expressions) {
    EXPECT_EQ(evaluate_expression("(3+5)/2"), 4.0);
    EXPECT_EQ(evaluate_expression("-2 * (1.5 + 0.5)"), -4.0);
    EXPECT_EQ(evaluate_expression("2 - 3 - 4"), -5.0);
    EXPECT_EQ(evaluate_expression("8 / 4 / 2"), 1.0);
    EXPECT_THROW(evaluate_expression(""), Error);
    EXPECT_THROW(evaluate_expression("2 +"), Error);
    EXPECT_THROW(evaluate_expression("(1"), Error);
    EXPECT_THROW(evaluate_expression("sqrt(4)"), Error);
    try {
        evaluate_expression("1/0");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::division_by_zero);
    }
    EXPECT_EQ(format_number(4.0), "4");
    EXPECT_EQ(format_number(0.4), "0.4");
}

TEST(Synonyms, VehicleAndPlurals) {
    SynonymFilter f;
    EXPECT_EQ(f.match("vehicle", {"car", "ship"}), std::set<std::string>{"car"});
    EXPECT_EQ(f.match("Ships", {"car", "ship"}), std::set<std::string>{"ship"});
    EXPECT_EQ(f.match("aircraft", {"plane", "ship"}), std::set<std::string>{"plane"});
    EXPECT_TRUE(f.match("bridge", {"car", "ship"}).empty());
    const auto parsed = SynonymFilter::parse("# comment\nboat: ship, Vessel\n\nbad line\n");
    EXPECT_EQ(parsed.match("boat", {"ship", "vessel", "car"}), (std::set<std::string>{"ship", "vessel"}));
}

TEST(Execute, CalculatorAndRenameResolution) {
    const auto tk = lake().toolkit();
    EpisodeContext ctx;
    auto o = run(tk, ctx, "basic_calculator", {{"expression", "(3+5)/2"}});
    ASSERT_EQ(o.status, ObservationStatus::ok);
    EXPECT_EQ(o.payload["value"], 4.0);
    ExecutionMode renamed;
    renamed.rename = true;
    EXPECT_EQ(run(tk, ctx, "simple_calculator", {{"expression", "1+1"}}, 1, renamed).status, ObservationStatus::ok);
    const auto backend = run(tk, ctx, "basic_calculator", {{"expression", "1+1"}}, 2, renamed);
    EXPECT_EQ(backend.error_code, "unknown-tool");
}

TEST(Execute, MalformedArguments) {
    const auto tk = lake().toolkit();
    EpisodeContext ctx;
    auto o = tk.execute({"basic_calculator", "{oops", 0}, ctx, {});
    EXPECT_EQ(o.error_code, "illegal-arguments");
    o = run(tk, ctx, "basic_calculator", json::object());
    EXPECT_EQ(o.error_code, "illegal-arguments");
    o = run(tk, ctx, "crop_optical_or_sar_image", {{"image", "opt-1"}, {"x0", 0.8}, {"y0", 0}, {"x1", 0.2}, {"y1", 1}});
    EXPECT_EQ(o.error_code, "degenerate-aoi");
    o = run(tk, ctx, "crop_optical_or_sar_image", {{"image", "nope"}, {"x0", 0}, {"y0", 0}, {"x1", 1}, {"y1", 1}});
    EXPECT_EQ(o.error_code, "unknown-record");
    EXPECT_TRUE(ctx.images.empty());
}

TEST(Execute, ExposedSetRestrictsTools) {
    const auto tk = lake().toolkit();
    EpisodeContext ctx;
    ctx.exposed = {"basic_calculator"};
    EXPECT_EQ(run(tk, ctx, "theme_index_lookup", {{"theme", "water"}}).error_code, "unknown-tool");
    ctx.exposed.clear();
    const auto o = run(tk, ctx, "theme_index_lookup", {{"theme", "water"}});
    ASSERT_EQ(o.status, ObservationStatus::ok);
    EXPECT_NE(o.payload.dump().find("ndwi"), std::string::npos);
    EXPECT_EQ(run(tk, ctx, "theme_index_lookup", {{"theme", "plasma"}}).error_code, "unknown-theme");
}

TEST(Detection, VerifiedCountsAndSemanticFilter) {
    const auto tk = lake().toolkit();
    EpisodeContext ctx;
    auto o = run(tk, ctx, "get_object_bbox_by_optical_image", {{"image", "opt-1"}, {"target", "ship"}});
    ASSERT_EQ(o.status, ObservationStatus::ok);
    EXPECT_EQ(o.payload["count"], 3);
    o = run(tk, ctx, "get_object_bbox_by_optical_image", {{"image", "opt-1"}, {"target", "vehicle"}});
    ASSERT_EQ(o.status, ObservationStatus::ok);
    EXPECT_EQ(o.payload["count"], 2);
    for (const auto& b : o.payload["boxes"]) EXPECT_EQ(b["label"], "car");
    o = run(tk, ctx, "get_object_bbox_by_optical_image", {{"image", "opt-1"}, {"target", "bridge"}});
    EXPECT_EQ(o.status, ObservationStatus::empty);
    o = run(tk, ctx, "get_object_bbox_by_sar_image", {{"image", "opt-1"}, {"target", "ship"}});
    EXPECT_EQ(o.error_code, "illegal-arguments");
}

TEST(Detection, CropShiftsBoxesIntoPatchFrame) {
    const auto tk = lake().toolkit();
    EpisodeContext ctx;
    auto c = run(tk, ctx, "crop_optical_or_sar_image", {{"image", "opt-1"}, {"x0", 0.5}, {"y0", 0.5}, {"x1", 1}, {"y1", 1}}, 0);
    ASSERT_EQ(c.status, ObservationStatus::ok);
    EXPECT_EQ(c.payload["handle"], "img-0");
    auto o = run(tk, ctx, "get_object_bbox_by_optical_image", {{"image", "img-0"}, {"target", "ship"}}, 1);
    ASSERT_EQ(o.status, ObservationStatus::ok);
    ASSERT_EQ(o.payload["count"], 1);
    EXPECT_EQ(o.payload["boxes"][0]["x_min"], 10.0);
    EXPECT_EQ(o.payload["boxes"][0]["y_min"], 10.0);
}

TEST(Detection, CrossModalConfirmation) {
    const auto tk = lake().toolkit();
    EpisodeContext ctx;
    auto o = run(tk, ctx, "get_object_bbox_by_optical_sar_image", {{"optical", "opt-1"}, {"sar", "sar-1"}, {"target", "ship"}});
    ASSERT_EQ(o.status, ObservationStatus::ok);
    EXPECT_EQ(o.payload["count"], 2);
    o = run(tk, ctx, "get_sar_from_optical", {{"image", "opt-1"}}, 1);
    ASSERT_EQ(o.status, ObservationStatus::ok);
    EXPECT_EQ(o.payload["record_id"], "sar-1");
}

TEST(Detection, NoisyDetectorProperties) {
    const auto& l = lake();
    const auto image = l.toolkit().load_image(l.index->at("opt-1"));
    const auto verified = l.toolkit().detect_verified(image, "ship");

    const auto zero = l.toolkit({0.0, 0.0, 0.0});
    for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_EQ(zero.detect_unverified(image, "ship", seed), verified);

    const auto all_dropped = l.toolkit({2.0, 1.0, 0.0});
    EXPECT_EQ(all_dropped.detect_unverified(image, "ship", 3).status, ObservationStatus::empty);

    const auto noisy = l.toolkit({3.0, 0.3, 0.5});
    bool differs = false;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto a = noisy.detect_unverified(image, "ship", seed);
        EXPECT_EQ(a, noisy.detect_unverified(image, "ship", seed));
        differs |= a != verified;
        if (a.status != ObservationStatus::ok) continue;
        for (const auto& b : a.payload["boxes"]) {
            EXPECT_GE(b["x_min"].get<double>(), 0.0);
            EXPECT_LE(b["x_max"].get<double>(), 100.0);
            EXPECT_LT(b["x_min"].get<double>(), b["x_max"].get<double>());
        }
    }
    EXPECT_TRUE(differs);
}

TEST(Execute, UnverifiedModeReplaysBySeed) {
    const auto tk = lake().toolkit({3.0, 0.3, 0.3});
    ExecutionMode mode;
    mode.response = ResponseMode::unverified;
    mode.seed = 99;
    EpisodeContext c1, c2;
    const json args = {{"image", "opt-1"}, {"target", "ship"}};
    EXPECT_EQ(run(tk, c1, "get_object_bbox_by_optical_image", args, 4, mode),
              run(tk, c2, "get_object_bbox_by_optical_image", args, 4, mode));
}

TEST(Execute, MasksAndRelations) {
    const auto tk = lake().toolkit();
    EpisodeContext ctx;
    auto a = run(tk, ctx, "get_object_mask_by_optical_image", {{"image", "opt-1"}, {"target", "ship"}}, 0);
    ASSERT_EQ(a.status, ObservationStatus::ok) << a.message;
    EXPECT_EQ(a.payload["handle"], "mask-0");
    auto b = run(tk, ctx, "get_object_mask_by_optical_image", {{"image", "opt-1"}, {"target", "car"}}, 1);
    ASSERT_EQ(b.status, ObservationStatus::ok);
    const auto r = run(tk, ctx, "get_mask_geospatial_relationship", {{"mask_a", "mask-0"}, {"mask_b", "mask-1"}}, 2);
    ASSERT_EQ(r.status, ObservationStatus::ok);
    EXPECT_EQ(r.payload["relation"], "disjoint");
    const auto br = run(tk, ctx, "get_bbox_geospatial_relationship",
                        {{"a", {0, 0, 10, 10}}, {"b", {5, 5, 15, 15}}}, 3);
    EXPECT_DOUBLE_EQ(br.payload["iou"].get<double>(), 25.0 / 175.0);
    const auto nb = run(tk, ctx, "normalize_bounding_boxes",
                        {{"boxes", {{10, 10, 20, 20}}}, {"from_width", 100}, {"from_height", 100},
                         {"to_width", 200}, {"to_height", 200}}, 4);
    EXPECT_EQ(nb.payload["boxes"][0]["x_max"], 40.0);
}

TEST(Execute, ScenesAndDescriptions) {
    const auto tk = lake().toolkit();
    EpisodeContext ctx;
    auto s = run(tk, ctx, "analyze_optical_scene", {{"image", "opt-1"}});
    ASSERT_EQ(s.status, ObservationStatus::ok);
    EXPECT_NE(s.payload.dump().find("harbor"), std::string::npos);
    auto d = run(tk, ctx, "describe_optical_object", {{"image", "opt-1"}, {"target", "car"}});
    ASSERT_EQ(d.status, ObservationStatus::ok) << d.message;
    EXPECT_NE(d.payload.dump().find("red"), std::string::npos);
}

TEST(ObservationJson, RoundTrip) {
    const auto o = Observation::ok(PayloadKind::scalar, {{"value", 2}}, "m");
    EXPECT_EQ(observation_from_json(to_json(o)), o);
    const auto e = Observation::error(ErrorCode::budget_exhausted, "x");
    EXPECT_EQ(observation_from_json(to_json(e)), e);
    EXPECT_EQ(e.error_code, "budget-exhausted");
}

TEST(AnnotationStore, SaveLoad) {
    const auto dir = eogym::testing::temp_dir("ann");
    lake().ann->save(dir / "a.jsonl");
    const auto back = AnnotationStore::load(dir / "a.jsonl");
    EXPECT_EQ(back.size(), 2u);
    EXPECT_EQ(back.find("opt-1")->objects, lake().ann->find("opt-1")->objects);
    EXPECT_EQ(back.find("nope"), nullptr);
}

TEST(ExecutionModeJson, RoundTrip) {
    ExecutionMode m{ResponseMode::unverified, PromptMode::detailed, SchemaMode::all, true, 42};
    EXPECT_EQ(execution_mode_from_json(to_json(m)), m);
}
