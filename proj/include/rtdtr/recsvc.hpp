#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rtdtr/csl.hpp"
#include "rtdtr/rng.hpp"

namespace rtdtr {

/// A request failure with its HTTP status and a machine-readable code.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message, nlohmann::json detail = nullptr)
      : std::runtime_error(message), status_(status), code_(std::move(code)), detail_(std::move(detail)) {}

  int status() const { return status_; }
  const std::string& code() const { return code_; }
  const nlohmann::json& detail() const { return detail_; }
  nlohmann::json body() const;

 private:
  int status_;
  std::string code_;
  nlohmann::json detail_;
};

struct SessionPatient {
  double bmi = 0.0;
  double z_bmi = 0.0;
  double z3 = 0.0;
  double dose = 0.0;
  int stratum = 0;
};

/// One history entry. Advances log the window end; doses log the new dose.
struct SessionEvent {
  std::string kind;  // "advance" or "dose"
  double time = 0.0;
  double dose = 0.0;
  int stratum = 0;
  double intensity = 0.0;
  int recommendation = 0;
  std::size_t dt_steps = 0;           // advance
  std::vector<double> switch_events;  // advance
  bool override_flag = false;         // dose
};

struct SessionState {
  std::string session_id;
  nlohmann::json request;  // the create request, for replay
  SessionPatient patient;
  double dose_lo = 0.0;
  double dose_hi = 0.0;
  double delta = 0.0;
  std::vector<double> eta;
  double clock = 0.0;
  double last_change = 0.0;
  int recommended = 0;
  bool completed = false;
  std::vector<SessionEvent> history;

  // Patient simulator.
  CslConfig sim;
  std::uint64_t seed = 0;
  double latent = 0.0;
  std::size_t step = 0;
  Engine rng;

  double intensity_now() const;
};

using SessionSnapshot = std::shared_ptr<const SessionState>;

/// Session persistence. Implementations hand out immutable snapshots and
/// replace them wholesale.
class SessionStore {
 public:
  virtual ~SessionStore() = default;
  virtual SessionSnapshot get(const std::string& id) const = 0;
  virtual void put(SessionSnapshot state) = 0;
  virtual std::string next_id() = 0;
  virtual std::size_t size() const = 0;
};

class InMemorySessionStore final : public SessionStore {
 public:
  SessionSnapshot get(const std::string& id) const override;
  void put(SessionSnapshot state) override;
  std::string next_id() override;
  std::size_t size() const override;

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, SessionSnapshot> sessions_;
  std::uint64_t counter_ = 0;
};

struct ServiceConfig {
  CslConfig simulator;
  std::vector<double> default_eta = {-1.822, 1.189, 0.333, 1.181};
  std::uint64_t seed = 0;  // base for sessions without an explicit seed
  std::size_t default_dt_steps = 10;
};

nlohmann::json snapshot_to_json(const SessionState& s);

/// A fresh session from a create request. Throws ServiceError.
SessionState new_session(const nlohmann::json& request, std::string id, const ServiceConfig& cfg);
/// Advances a session in place; returns the StateDelta.
nlohmann::json advance_session(SessionState& s, std::size_t dt_steps);
/// Applies a dose in place; throws ServiceError on rejection.
void dose_session(SessionState& s, double dose, bool override_flag);
/// Rebuilds a session from a snapshot's create request and history.
SessionState replay_session(const nlohmann::json& snapshot, const ServiceConfig& cfg);

class RecommendationService {
 public:
  explicit RecommendationService(ServiceConfig cfg = {},
                                 std::shared_ptr<SessionStore> store = std::make_shared<InMemorySessionStore>());

  /// Request {bmi, dose_range?, delta?, eta?, seed?, dilation?, simulator?};
  /// returns the initial snapshot.
  nlohmann::json create_session(const nlohmann::json& request);
  /// Request {dt_steps?}; returns the window's StateDelta.
  nlohmann::json advance(const std::string& id, const nlohmann::json& request);
  /// Request {dose, override?}; returns the snapshot.
  nlohmann::json apply_dose(const std::string& id, const nlohmann::json& request);
  nlohmann::json get_state(const std::string& id) const;

  SessionSnapshot snapshot(const std::string& id) const;

  struct Response {
    int status = 200;
    std::string body;
  };
  /// Routes a request by method and path; the HTTP server and bindings use this.
  Response handle(const std::string& method, const std::string& path, const std::string& body);

  const ServiceConfig& config() const { return cfg_; }

 private:
  std::mutex& session_mutex(const std::string& id);

  ServiceConfig cfg_;
  std::shared_ptr<SessionStore> store_;
  std::mutex locks_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};

/// HTTP front end over RecommendationService::handle.
class HttpServer {
 public:
  explicit HttpServer(RecommendationService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds to host:port; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); blocks.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace rtdtr
