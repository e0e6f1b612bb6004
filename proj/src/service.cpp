#include "berto/service.hpp"

#include <cstdlib>

#include "httplib.h"

namespace berto {

namespace {

using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

HttpReply error(int status, const std::string& msg) { return {status, json{{"error", msg}}.dump()}; }

class BadRequest : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json parse_body(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw BadRequest("request body must be a JSON object");
  return j;
}

template <class T>
T field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw BadRequest(std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw BadRequest(std::string("field '") + key + "' has the wrong type");
  }
}

Preference preference_field(const json& j) {
  const auto text = field<std::string>(j, "preference");
  try {
    return parse_preference(text);
  } catch (const std::invalid_argument& e) {
    throw BadRequest(e.what());
  }
}

json preferences_json(const Scenario& s) {
  json list = json::array();
  for (auto p : kAllPreferences) list.push_back({{"phrase", phrase(p)}, {"q", q_for_preference(p, s.orientation())}});
  return {{"orientation", orientation_name(s.orientation())}, {"preferences", list}};
}

HttpReply do_predict(const Scenario& s, const json& req) {
  const auto cell = field<int>(req, "cell_id");
  const auto end = field<std::int64_t>(req, "window_end_time");
  const auto pref = preference_field(req);
  try {
    const auto p = s.predict_point(cell, end, pref);
    return {200, json{{"cell_id", cell},
                      {"preference", phrase(pref)},
                      {"q", p.q},
                      {"target_time", p.target_ms},
                      {"prediction", p.prediction},
                      {"actual", p.actual}}
                     .dump()};
  } catch (const std::out_of_range& e) {
    return error(404, e.what());
  }
}

HttpReply do_simulate(const Scenario& s, const json& req) {
  const auto pref = preference_field(req);
  TimeRange range;
  if (req.contains("time_range") && !req["time_range"].is_null()) {
    const auto& tr = req["time_range"];
    if (!tr.is_object()) throw BadRequest("time_range must be an object {start, end}");
    if (tr.contains("start")) range.start_ms = field<std::int64_t>(tr, "start");
    if (tr.contains("end")) range.end_ms = field<std::int64_t>(tr, "end");
  }
  if (range.start_ms > range.end_ms) throw BadRequest("time_range start is after end");
  const bool traces = req.contains("include_traces") && field<bool>(req, "include_traces");
  const auto run = s.run(pref, range);
  auto out = to_json(run.report, traces);
  out["preference"] = phrase(pref);
  out["q"] = run.q;
  out["orientation"] = orientation_name(s.orientation());
  if (traces) out["times"] = s.traces(pref, range).times;
  return {200, out.dump()};
}

}  // namespace

HttpReply handle_request(const Scenario& s, const std::string& method, const std::string& path,
                         const std::string& body) {
  try {
    if (path == "/health") {
      if (method != "GET") return error(405, "use GET");
      return {200, json{{"status", "ok"},
                        {"version", kVersion},
                        {"vocab_hash", hex64(s.vocabulary().hash())},
                        {"orientation", orientation_name(s.orientation())},
                        {"baseline", s.baseline_label()},
                        {"pairs", s.dataset().pairs.size()},
                        {"test_samples", s.dataset().test.size()}}
                       .dump()};
    }
    if (path == "/preferences") {
      if (method != "GET") return error(405, "use GET");
      return {200, preferences_json(s).dump()};
    }
    if (path == "/predict") {
      if (method != "POST") return error(405, "use POST");
      return do_predict(s, parse_body(body));
    }
    if (path == "/simulate") {
      if (method != "POST") return error(405, "use POST");
      return do_simulate(s, parse_body(body));
    }
    return error(404, "unknown route " + path);
  } catch (const BadRequest& e) {
    return error(400, e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

ListenAddress parse_listen_address(const std::string& s) {
  ListenAddress a;
  const auto colon = s.rfind(':');
  std::string port = s;
  if (colon != std::string::npos) {
    if (colon > 0) a.host = s.substr(0, colon);
    port = s.substr(colon + 1);
  }
  std::size_t used = 0;
  int p = -1;
  try {
    p = std::stoi(port, &used);
  } catch (const std::exception&) {
  }
  if (used != port.size() || p < 0 || p > 65535) throw std::invalid_argument("bad listen address '" + s + "'");
  a.port = p;
  return a;
}

ListenAddress listen_address_from_env() {
  const char* v = std::getenv("BERTO_LISTEN");
  return v && *v ? parse_listen_address(v) : ListenAddress{};
}

struct Service::Impl {
  explicit Impl(const Scenario& s) : scenario(s) {}
  const Scenario& scenario;
  httplib::Server server;
};

Service::Service(const Scenario& scenario) : impl_(std::make_unique<Impl>(scenario)) {
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const auto reply = handle_request(impl_->scenario, req.method, req.path, req.body);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  };
  impl_->server.Get("/health", route);
  impl_->server.Get("/preferences", route);
  impl_->server.Post("/predict", route);
  impl_->server.Post("/simulate", route);
  impl_->server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.status == 404) res.set_content(json{{"error", "unknown route " + req.path}}.dump(), "application/json");
  });
}

Service::~Service() = default;

int Service::bind(const ListenAddress& addr) {
  if (addr.port == 0) return impl_->server.bind_to_any_port(addr.host);
  return impl_->server.bind_to_port(addr.host, addr.port) ? addr.port : -1;
}

bool Service::run() { return impl_->server.listen_after_bind(); }

void Service::stop() { impl_->server.stop(); }

}  // namespace berto
