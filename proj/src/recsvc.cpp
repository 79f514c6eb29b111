#include "rtdtr/recsvc.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include "httplib.h"
#include "rtdtr/core.hpp"

namespace rtdtr {

using nlohmann::json;

namespace {

const char* stratum_name(int s) { return s == 1 ? "upper" : "lower"; }

ServiceError bad_request(const std::string& code, const std::string& message, json detail = nullptr) {
  return ServiceError(400, code, message, std::move(detail));
}

double finite_number(const json& j, const char* key, const std::string& code, int status = 400) {
  if (!j.is_number()) throw ServiceError(status, code, std::string("\"") + key + "\" must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ServiceError(status, code, std::string("\"") + key + "\" must be finite");
  return v;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

HistoryView history_of(const SessionState& s) {
  HistoryView h;
  h.a_minus = s.patient.stratum;
  h.z3_now = s.patient.z3;
  h.time_since_change = s.clock - s.last_change;
  h.z_bmi = s.patient.z_bmi;
  h.t = s.clock;
  return h;
}

json event_to_json(const SessionEvent& e) {
  json j{{"kind", e.kind},
         {"time", e.time},
         {"dose", e.dose},
         {"stratum", e.stratum},
         {"intensity", e.intensity},
         {"recommendation", e.recommendation}};
  if (e.kind == "advance") {
    j["dt_steps"] = e.dt_steps;
    j["switch_events"] = e.switch_events;
  } else {
    j["override"] = e.override_flag;
    if (e.override_flag) j["tag"] = "override";
  }
  return j;
}

}  // namespace

json ServiceError::body() const { return json{{"code", code_}, {"message", what()}, {"detail", detail_}}; }

double SessionState::intensity_now() const {
  return intensity_eval(IntensitySpec(IntensityFamily::OxytocinLinExp, eta), history_of(*this));
}

SessionSnapshot InMemorySessionStore::get(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

void InMemorySessionStore::put(SessionSnapshot state) {
  std::unique_lock lock(mu_);
  sessions_[state->session_id] = std::move(state);
}

std::string InMemorySessionStore::next_id() {
  std::unique_lock lock(mu_);
  return "s" + std::to_string(++counter_);
}

std::size_t InMemorySessionStore::size() const {
  std::shared_lock lock(mu_);
  return sessions_.size();
}

json snapshot_to_json(const SessionState& s) {
  json history = json::array();
  for (const auto& e : s.history) history.push_back(event_to_json(e));
  return json{{"session_id", s.session_id},
              {"patient",
               {{"bmi", s.patient.bmi},
                {"z_bmi", s.patient.z_bmi},
                {"z3", s.patient.z3},
                {"dose", s.patient.dose},
                {"stratum", s.patient.stratum}}},
              {"dose_range", {s.dose_lo, s.dose_hi}},
              {"delta", s.delta},
              {"eta", s.eta},
              {"clock", s.clock},
              {"last_change", s.last_change},
              {"intensity", s.intensity_now()},
              {"recommended_stratum", s.recommended},
              {"recommended", stratum_name(s.recommended)},
              {"completed", s.completed},
              {"seed", s.seed},
              {"request", s.request},
              {"history", std::move(history)}};
}

SessionState new_session(const json& request, std::string id, const ServiceConfig& cfg) {
  if (!request.is_object()) throw bad_request("invalid_request", "request body must be a JSON object");
  static const char* const kKnown[] = {"bmi", "dose_range", "delta", "eta", "seed", "dilation", "simulator"};
  for (const auto& [key, _] : request.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown))
      throw bad_request("invalid_request", "unknown field \"" + key + "\"");
  }

  SessionState s;
  s.session_id = std::move(id);
  s.request = request;
  s.sim = cfg.simulator;
  if (auto it = request.find("simulator"); it != request.end()) {
    try {
      s.sim = csl_config_from_json(it->dump());
    } catch (const std::exception& e) {
      throw bad_request("invalid_simulator", e.what());
    }
  }

  auto bmi = request.find("bmi");
  if (bmi == request.end() || bmi->is_null())
    throw ServiceError(422, "missing_covariate", "baseline covariate \"bmi\" is required");
  s.patient.bmi = finite_number(*bmi, "bmi", "invalid_covariate", 422);
  if (s.patient.bmi <= 0.0) throw ServiceError(422, "invalid_covariate", "\"bmi\" must be positive");
  s.patient.z_bmi = (s.patient.bmi - s.sim.bmi_mean) / s.sim.bmi_sd;

  s.dose_lo = s.sim.dose_lo;
  s.dose_hi = s.sim.dose_hi;
  if (auto it = request.find("dose_range"); it != request.end()) {
    if (!it->is_array() || it->size() != 2)
      throw bad_request("invalid_range", "\"dose_range\" must be [lo, hi]");
    s.dose_lo = finite_number((*it)[0], "dose_range", "invalid_range");
    s.dose_hi = finite_number((*it)[1], "dose_range", "invalid_range");
  }
  if (s.dose_lo < 0.0 || !(s.dose_lo < s.dose_hi))
    throw bad_request("invalid_range", "dose range needs 0 <= lo < hi",
                      json{{"dose_range", {s.dose_lo, s.dose_hi}}});

  s.delta = 0.5 * (s.dose_lo + s.dose_hi);
  if (auto it = request.find("delta"); it != request.end() && !it->is_null()) {
    s.delta = finite_number(*it, "delta", "invalid_delta");
    if (s.delta != 0.0 && (s.delta < s.dose_lo || s.delta > s.dose_hi))
      throw bad_request("invalid_delta", "delta must lie within the dose range or be 0",
                        json{{"delta", s.delta}, {"dose_range", {s.dose_lo, s.dose_hi}}});
  }

  s.eta = cfg.default_eta;
  if (auto it = request.find("eta"); it != request.end() && !it->is_null()) {
    if (!it->is_array() || it->size() != 4)
      throw bad_request("invalid_eta", "\"eta\" must have 4 elements",
                        json{{"expected", 4}, {"got", it->is_array() ? it->size() : 0}});
    s.eta.clear();
    for (const auto& v : *it) s.eta.push_back(finite_number(v, "eta", "invalid_eta"));
  }

  s.seed = derive_seed(cfg.seed, {stream::kSession, fnv1a(s.session_id)});
  if (auto it = request.find("seed"); it != request.end()) {
    if (!it->is_number_unsigned()) throw bad_request("invalid_request", "\"seed\" must be a nonnegative integer");
    s.seed = it->get<std::uint64_t>();
  }
  s.rng = make_engine(s.seed, {stream::kSession});

  if (auto it = request.find("dilation"); it != request.end()) {
    s.patient.z3 = finite_number(*it, "dilation", "invalid_covariate", 422);
    if (s.patient.z3 < 0.0 || s.patient.z3 > 10.0)
      throw ServiceError(422, "invalid_covariate", "\"dilation\" must lie in [0, 10] cm");
  } else {
    s.patient.z3 = std::uniform_real_distribution<double>(s.sim.dilation_init_lo, s.sim.dilation_init_hi)(s.rng);
  }
  s.latent = normal(s.rng, 0.0, 1.0);

  s.patient.dose = s.dose_lo;
  s.patient.stratum = dose_stratum(s.patient.dose, s.delta);
  s.recommended = s.patient.stratum;
  return s;
}

json advance_session(SessionState& s, std::size_t dt_steps) {
  if (s.completed)
    throw ServiceError(409, "session_completed", "session " + s.session_id + " has completed",
                       json{{"clock", s.clock}});
  if (dt_steps == 0) throw bad_request("invalid_horizon", "\"dt_steps\" must be a positive integer");

  const TimeGrid& grid = s.sim.grid;
  const double dt = grid.dt();
  const std::size_t per_cov = grid.steps_per_covariate();
  const std::size_t n_steps = grid.steps();
  const IntensitySpec spec(IntensityFamily::OxytocinLinExp, s.eta);

  const double start = s.clock;
  json times = json::array();
  json intensity = json::array();
  std::vector<double> events;
  double cumulative = 0.0;
  bool delivered = false;
  double lam = 0.0;
  for (std::size_t i = 0; i < dt_steps && s.step < n_steps; ++i) {
    const std::size_t k = s.step;
    s.clock = static_cast<double>(k) * dt;
    if (k > 0 && k % per_cov == 0)
      s.patient.z3 = csl_next_dilation(s.sim, s.patient.z3, s.patient.dose, s.latent, normal(s.rng, 0.0, 1.0));
    lam = intensity_eval(spec, history_of(s));
    times.push_back(s.clock);
    intensity.push_back(lam);
    cumulative += lam * dt;
    const double u_completion = uniform01(s.rng);
    const double u_switch = uniform01(s.rng);
    s.step = k + 1;
    if (u_completion < std::min(csl_delivery_intensity(s.sim, s.patient.z3, s.patient.dose) * dt, 1.0)) {
      delivered = true;
      break;
    }
    if (u_switch < std::min(lam * dt, 1.0)) events.push_back(s.clock);
  }
  s.clock = static_cast<double>(s.step) * dt;
  if (delivered || s.step >= n_steps) s.completed = true;
  s.recommended = events.empty() ? s.patient.stratum : 1 - s.patient.stratum;

  SessionEvent e;
  e.kind = "advance";
  e.time = s.clock;
  e.dose = s.patient.dose;
  e.stratum = s.patient.stratum;
  e.intensity = lam;
  e.recommendation = s.recommended;
  e.dt_steps = dt_steps;
  e.switch_events = events;
  s.history.push_back(e);

  return json{{"session_id", s.session_id},
              {"window", {{"start", start}, {"end", s.clock}, {"dt", dt}, {"dt_steps", dt_steps}}},
              {"times", std::move(times)},
              {"intensity", std::move(intensity)},
              {"switch_events", events},
              {"recommended_stratum", s.recommended},
              {"recommended", stratum_name(s.recommended)},
              {"current_stratum", s.patient.stratum},
              {"survival_probability", std::exp(-cumulative)},
              {"z3", s.patient.z3},
              {"clock", s.clock},
              {"delivered", delivered},
              {"completed", s.completed}};
}

void dose_session(SessionState& s, double dose, bool override_flag) {
  if (s.completed)
    throw ServiceError(409, "session_completed", "session " + s.session_id + " has completed",
                       json{{"clock", s.clock}});
  if (!std::isfinite(dose) || dose < s.dose_lo || dose > s.dose_hi)
    throw bad_request("dose_out_of_range", "dose must lie within the dose range",
                      json{{"dose", dose}, {"dose_range", {s.dose_lo, s.dose_hi}}});
  const int stratum = dose_stratum(dose, s.delta);
  if (stratum != s.recommended && !override_flag) {
    json range = s.recommended == 1 ? json{s.delta == 0.0 ? 0.0 : s.delta, s.dose_hi}
                                    : json{s.dose_lo, s.delta == 0.0 ? 0.0 : s.delta};
    throw ServiceError(409, "recommendation_conflict",
                       std::string("dose falls in the ") + stratum_name(stratum) + " stratum; recommended stratum is " +
                           stratum_name(s.recommended) + "; resend with override to proceed",
                       json{{"recommended_stratum", s.recommended},
                            {"recommended", stratum_name(s.recommended)},
                            {"requested_stratum", stratum},
                            {"recommended_dose_range", std::move(range)}});
  }
  if (stratum != s.patient.stratum) s.last_change = s.clock;
  s.patient.dose = dose;
  s.patient.stratum = stratum;

  SessionEvent e;
  e.kind = "dose";
  e.time = s.clock;
  e.dose = dose;
  e.stratum = stratum;
  e.intensity = s.intensity_now();
  e.recommendation = s.recommended;
  e.override_flag = override_flag;
  s.history.push_back(e);
}

SessionState replay_session(const json& snapshot, const ServiceConfig& cfg) {
  try {
    json request = snapshot.at("request");
    request["seed"] = snapshot.at("seed");
    SessionState s = new_session(request, snapshot.at("session_id").get<std::string>(), cfg);
    s.request = snapshot.at("request");
    for (const auto& e : snapshot.at("history")) {
      const std::string kind = e.at("kind").get<std::string>();
      if (kind == "advance")
        advance_session(s, e.at("dt_steps").get<std::size_t>());
      else if (kind == "dose")
        dose_session(s, e.at("dose").get<double>(), e.at("override").get<bool>());
      else
        throw bad_request("invalid_history", "unknown history entry \"" + kind + "\"");
    }
    return s;
  } catch (const json::exception& e) {
    throw bad_request("invalid_snapshot", e.what());
  }
}

RecommendationService::RecommendationService(ServiceConfig cfg, std::shared_ptr<SessionStore> store)
    : cfg_(std::move(cfg)), store_(std::move(store)) {
  if (cfg_.default_eta.size() != 4) throw ConfigError("default eta must have 4 elements");
  if (cfg_.default_dt_steps == 0) throw ConfigError("default dt_steps must be positive");
}

std::mutex& RecommendationService::session_mutex(const std::string& id) {
  std::lock_guard lock(locks_mu_);
  auto& m = locks_[id];
  if (!m) m = std::make_unique<std::mutex>();
  return *m;
}

SessionSnapshot RecommendationService::snapshot(const std::string& id) const {
  auto s = store_->get(id);
  if (!s) throw ServiceError(404, "unknown_session", "no session " + id);
  return s;
}

json RecommendationService::create_session(const json& request) {
  auto s = std::make_shared<SessionState>(new_session(request, store_->next_id(), cfg_));
  json out = snapshot_to_json(*s);
  store_->put(std::move(s));
  return out;
}

json RecommendationService::advance(const std::string& id, const json& request) {
  std::size_t steps = cfg_.default_dt_steps;
  if (!request.is_null()) {
    if (!request.is_object()) throw bad_request("invalid_request", "request body must be a JSON object");
    if (auto it = request.find("dt_steps"); it != request.end()) {
      if (!it->is_number_integer() || it->get<std::int64_t>() <= 0)
        throw bad_request("invalid_horizon", "\"dt_steps\" must be a positive integer");
      steps = it->get<std::size_t>();
    }
  }
  std::lock_guard lock(session_mutex(id));
  SessionState s = *snapshot(id);
  json delta = advance_session(s, steps);
  store_->put(std::make_shared<const SessionState>(std::move(s)));
  return delta;
}

json RecommendationService::apply_dose(const std::string& id, const json& request) {
  if (!request.is_object()) throw bad_request("invalid_request", "request body must be a JSON object");
  auto d = request.find("dose");
  if (d == request.end()) throw bad_request("invalid_request", "\"dose\" is required");
  const double dose = finite_number(*d, "dose", "dose_out_of_range");
  bool override_flag = false;
  if (auto it = request.find("override"); it != request.end()) {
    if (!it->is_boolean()) throw bad_request("invalid_request", "\"override\" must be a boolean");
    override_flag = it->get<bool>();
  }
  std::lock_guard lock(session_mutex(id));
  SessionState s = *snapshot(id);
  dose_session(s, dose, override_flag);
  json out = snapshot_to_json(s);
  store_->put(std::make_shared<const SessionState>(std::move(s)));
  return out;
}

json RecommendationService::get_state(const std::string& id) const { return snapshot_to_json(*snapshot(id)); }

RecommendationService::Response RecommendationService::handle(const std::string& method, const std::string& path,
                                                               const std::string& body) {
  static const std::regex kSession(R"(^/sessions/([A-Za-z0-9_-]+)$)");
  static const std::regex kAction(R"(^/sessions/([A-Za-z0-9_-]+)/(advance|dose)$)");
  auto respond = [](int status, const json& j) { return Response{status, j.dump()}; };
  try {
    json req;
    if (!body.empty() && body.find_first_not_of(" \t\r\n") != std::string::npos) {
      try {
        req = json::parse(body);
      } catch (const json::parse_error& e) {
        throw bad_request("invalid_json", "request body is not valid JSON", json{{"error", e.what()}});
      }
    }
    std::smatch m;
    if (path == "/healthz") {
      if (method != "GET") throw ServiceError(405, "method_not_allowed", method + " " + path);
      return respond(200, json{{"status", "ok"}, {"sessions", store_->size()}});
    }
    if (path == "/sessions") {
      if (method != "POST") throw ServiceError(405, "method_not_allowed", method + " " + path);
      return respond(201, create_session(req));
    }
    if (std::regex_match(path, m, kSession)) {
      if (method != "GET") throw ServiceError(405, "method_not_allowed", method + " " + path);
      return respond(200, get_state(m[1]));
    }
    if (std::regex_match(path, m, kAction)) {
      if (method != "POST") throw ServiceError(405, "method_not_allowed", method + " " + path);
      return respond(200, m[2] == "advance" ? advance(m[1], req) : apply_dose(m[1], req));
    }
    throw ServiceError(404, "not_found", "no route for " + path);
  } catch (const ServiceError& e) {
    return respond(e.status(), e.body());
  } catch (const std::exception& e) {
    return respond(500, ServiceError(500, "internal", e.what()).body());
  }
}

struct HttpServer::Impl {
  explicit Impl(RecommendationService& svc) : service(svc) {}
  RecommendationService& service;
  httplib::Server server;
};

HttpServer::HttpServer(RecommendationService& service) : impl_(std::make_unique<Impl>(service)) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    auto r = impl_->service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  impl_->server.Get(".*", handler);
  impl_->server.Post(".*", handler);
  impl_->server.Put(".*", handler);
  impl_->server.Delete(".*", handler);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  if (!impl_->server.bind_to_port(host, port)) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

}  // namespace rtdtr
