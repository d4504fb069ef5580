#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <httplib.h>

#include "chroma/codec.hpp"
#include "chroma/image_io.hpp"
#include "chroma/service.hpp"

using namespace chroma;
using nlohmann::json;

namespace {

Config tiny_config() {
    Config c;
    c.model.ae_width = 8;
    c.model.unet_width = 16;
    c.model.context_dim = 16;
    c.model.text_tokens = 4;
    c.model.exemplar_tokens = 2;
    c.model.image_size = 32;
    c.schedule.sampler_steps = 3;
    return c;
}

std::string png_b64(unsigned seed) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<float> u(0, 1);
    RgbImage img(24, 24);
    for (auto& v : img.pixels) v = u(gen);
    return base64_encode(encode_png(quantize8(img)));
}

json wait_job(httplib::Client& cli, const std::string& id) {
    for (int i = 0; i < 600; ++i) {
        const auto r = cli.Get("/jobs/" + id);
        REQUIRE(r);
        const auto j = json::parse(r->body);
        if (j["status"] == "done" || j["status"] == "failed") return j;
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    FAIL("job did not finish");
    return {};
}

}  // namespace

TEST_CASE("base64 and sha256 known vectors") {
    const std::string s = "foobar";
    const std::vector<std::uint8_t> bytes(s.begin(), s.end());
    CHECK(base64_encode(bytes) == "Zm9vYmFy");
    CHECK(base64_encode({'f', 'o'}) == "Zm8=");
    CHECK(base64_decode("Zm8=") == std::vector<std::uint8_t>{'f', 'o'});
    CHECK(base64_decode("Zg==") == std::vector<std::uint8_t>{'f'});
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
    CHECK_THROWS(base64_decode("abc"));
    CHECK(sha256_hex({'a', 'b', 'c'}) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("request wire format") {
    const json minimal{{"image", png_b64(1)}};
    const auto r = request_from_json(minimal);
    CHECK(r.use_stroke_color);
    CHECK_FALSE(r.region_only);
    CHECK(r.deformable_decoder);
    CHECK(r.guidance_scale == 7.0);
    CHECK(r.sag_scale == 0.05);
    CHECK(r.sag_ts == 600);
    // normalised form is a fixed point
    const auto j = request_to_json(r);
    CHECK(request_to_json(request_from_json(j)) == j);

    json bad = minimal;
    bad["strokes"] = json::array({{{"kind", "rectangle"}, {"rect", {0, 0, 4, 4}}, {"color", {0.1, 2.0, 0.3}}}});
    try {
        request_from_json(bad);
        FAIL("expected rejection");
    } catch (const FieldError& e) {
        CHECK(e.field == "strokes[0].color");
    }
    json unknown = minimal;
    unknown["colour"] = 1;
    CHECK_THROWS_AS(request_from_json(unknown), FieldError);
    json wrong = minimal;
    wrong["num_outputs"] = "two";
    try {
        request_from_json(wrong);
        FAIL("expected rejection");
    } catch (const FieldError& e) {
        CHECK(e.field == "num_outputs");
    }
    CHECK_THROWS_AS(request_from_json(json{{"prompt", "x"}}), FieldError);

    const json ev{{"add_strokes", {{{"points", {{1, 2}, {3, 4}}}, {"color", {1, 0, 0}}, {"radius", 3}}}},
                  {"prompt", "a cat"},
                  {"options", {{"sag_scale", 0.1}}}};
    const auto e = event_from_json(ev);
    CHECK(e.add_strokes.size() == 1);
    CHECK(*e.prompt == "a cat");
    CHECK(*e.options.sag_scale == 0.1);
    CHECK(event_to_json(e)["options"]["sag_scale"] == 0.1);
    CHECK(event_from_json(json::object()).empty());
}

TEST_CASE("shared schema matches the codec") {
    std::ifstream in(std::filesystem::path(CHROMA_SOURCE_DIR) / "schema" / "colorize_request.schema.json");
    REQUIRE(in);
    const auto schema = json::parse(in);
    const auto& props = schema["properties"];
    // every normalised field is declared and every declared field is accepted
    json full = request_to_json(request_from_json(json{{"image", png_b64(2)}}));
    full["exemplar"] = png_b64(3);
    full["hint_image"] = png_b64(4);
    full["hint_mask"] = png_b64(5);
    for (const auto& [key, _] : full.items()) CHECK_MESSAGE(props.contains(key), key);
    for (const auto& [key, spec] : props.items()) {
        CHECK_MESSAGE(full.contains(key), key);
        if (spec.contains("default")) CHECK_MESSAGE(full[key] == spec["default"], key);
    }
    CHECK_NOTHROW(request_from_json(full));

    const auto& stroke = schema["$defs"]["stroke"]["properties"];
    for (const auto& [key, _] : stroke.items()) {
        json s{{"color", {0.5, 0.5, 0.5}}};
        if (key == "rect") s["kind"] = "rectangle";
        s[key] = key == "kind" ? json("polyline") : key == "points" ? json{{1, 1}} : key == "rect" ? json{0, 0, 2, 2}
                 : key == "color" ? json{0.1, 0.2, 0.3} : json(3.0);
        if (!s.contains("points") && s.value("kind", "polyline") == "polyline") s["points"] = {{1, 1}};
        CHECK_NOTHROW(stroke_from_json(s, "s"));
    }
    json ev;
    for (const auto& [key, _] : schema["$defs"]["session_event"]["properties"]["options"]["properties"].items()) {
        ev["options"][key] = key == "num_outputs" || key == "sag_ts" ? json(1)
                             : key.find("scale") != std::string::npos ? json(1.0) : json(true);
    }
    const auto e = event_from_json(ev);
    CHECK(event_to_json(e)["options"].size() == ev["options"].size());
}

TEST_CASE("service: jobs, echo, sessions and restart replay") {
    const auto state = std::filesystem::temp_directory_path() / "chroma_service_test";
    std::filesystem::remove_all(state);
    ServiceOptions o;
    o.state_dir = state;
    o.port = 0;
    o.queue_depth = 4;
    std::string session_id, before_sha;
    {
        Service svc(o, make_models(tiny_config()));
        const int port = svc.start();
        httplib::Client cli("127.0.0.1", port);
        cli.set_read_timeout(120);

        const auto h = cli.Get("/health");
        REQUIRE(h);
        CHECK(h->status == 200);
        CHECK(json::parse(h->body)["checkpoint_hash"] == "untrained");

        const json payload{{"image", png_b64(2)}, {"prompt", "a green ring"}, {"seed", 5}};
        const auto echo = cli.Post("/echo", payload.dump(), "application/json");
        REQUIRE(echo);
        const auto ej = json::parse(echo->body);
        CHECK(ej["image"] == payload["image"]);
        CHECK(ej["seed"] == 5);
        CHECK(ej["deformable_decoder"] == true);

        const auto bad = cli.Post("/jobs", json{{"image", 3}}.dump(), "application/json");
        REQUIRE(bad);
        CHECK(bad->status == 422);
        CHECK(json::parse(bad->body)["error"]["field"] == "image");
        CHECK(cli.Post("/jobs", "{not json", "application/json")->status == 400);
        CHECK(cli.Get("/jobs/job-999999")->status == 404);

        std::vector<std::string> pngs;
        for (int k = 0; k < 2; ++k) {
            const auto r = cli.Post("/jobs", payload.dump(), "application/json");
            REQUIRE(r);
            CHECK(r->status == 202);
            const auto j = wait_job(cli, json::parse(r->body)["id"]);
            CHECK(j["status"] == "done");
            CHECK(j["seed"] == 5);
            CHECK(j["checkpoint_hash"] == "untrained");
            const auto img = cli.Get(j["results"][0].get<std::string>());
            REQUIRE(img);
            CHECK(img->status == 200);
            pngs.push_back(img->body);
        }
        CHECK(pngs[0] == pngs[1]);

        const auto created = cli.Post("/sessions", payload.dump(), "application/json");
        REQUIRE(created);
        CHECK(created->status == 201);
        session_id = json::parse(created->body)["id"];
        const json ev{{"add_strokes", {{{"kind", "rectangle"}, {"rect", {2, 2, 10, 10}}, {"color", {1, 0, 0}}}}}};
        const auto applied = cli.Post("/sessions/" + session_id + "/events", ev.dump(), "application/json");
        REQUIRE(applied);
        CHECK(applied->status == 200);
        const auto bad_ev = cli.Post("/sessions/" + session_id + "/events",
                                     json{{"options", {{"num_outputs", 0}}}}.dump(), "application/json");
        CHECK(bad_ev->status == 422);
        CHECK(cli.Post("/sessions/session-999999/events", ev.dump(), "application/json")->status == 404);
        const auto got = json::parse(cli.Get("/sessions/" + session_id)->body);
        CHECK(got["events"] == 1);
        before_sha = got["results"][0]["sha256"];
        svc.stop();
    }
    {
        Service svc(o, make_models(tiny_config()));
        httplib::Client cli("127.0.0.1", svc.start());
        cli.set_read_timeout(120);
        const auto got = cli.Get("/sessions/" + session_id);
        REQUIRE(got);
        CHECK(got->status == 200);
        const auto j = json::parse(got->body);
        CHECK(j["events"] == 1);
        CHECK(j["results"][0]["sha256"] == before_sha);
    }
    std::filesystem::remove_all(state);
}
