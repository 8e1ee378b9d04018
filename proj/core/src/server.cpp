#include "shiftbench/server.hpp"

#include <httplib.h>

namespace shiftbench::workbench {

namespace {

void send_json(httplib::Response& res, int status, const json& body)
{
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const std::exception& e)
{
  const ErrorInfo info = describe_error(e);
  send_json(res, info.status, info.to_json());
}

using Op = json (Workbench::*)(const json&);

} // namespace

struct Server::Impl {
  Workbench& wb;
  httplib::Server http;

  explicit Impl(Workbench& w) : wb(w)
  {
    http.set_payload_max_length(64u << 20);
    post("/v1/models", [this](const json& body, httplib::Response& res) {
      const json out = wb.register_model(body);
      send_json(res, out["created"].get<bool>() ? 201 : 200, out);
    });
    post_op("/v1/estimate", &Workbench::estimate);
    post_op("/v1/worst-case", &Workbench::worst_case);
    post_op("/v1/sweep", &Workbench::sweep);

    http.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}, {"toolkit_version", toolkit_version()}});
    });
    http.Get("/v1/runs", [this](const httplib::Request&, httplib::Response& res) {
      try {
        send_json(res, 200, wb.list_runs());
      } catch (const std::exception& e) {
        send_error(res, e);
      }
    });
    http.Get(R"(/v1/runs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        send_json(res, 200, wb.get_run(req.matches[1].str()));
      } catch (const std::exception& e) {
        send_error(res, e);
      }
    });
    http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty())
        send_json(res, res.status,
                  {{"error", {{"type", res.status == 404 ? "not_found" : "http"}, {"message", "no such route"}}}});
    });
  }

  template <class F>
  void post(const std::string& path, F handler)
  {
    http.Post(path, [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(json::parse(req.body), res);
      } catch (const std::exception& e) {
        send_error(res, e);
      }
    });
  }

  void post_op(const std::string& path, Op op)
  {
    post(path, [this, op](const json& body, httplib::Response& res) { send_json(res, 200, (wb.*op)(body)); });
  }
};

Server::Server(Workbench& workbench) : impl_(std::make_unique<Impl>(workbench)) {}

Server::~Server() = default;

int Server::bind(const std::string& host, int port)
{
  if (port == 0)
    return impl_->http.bind_to_any_port(host);
  return impl_->http.bind_to_port(host, port) ? port : -1;
}

bool Server::run()
{
  return impl_->http.listen_after_bind();
}

void Server::stop()
{
  impl_->http.stop();
}

void Server::wait_until_ready() const
{
  impl_->http.wait_until_ready();
}

} // namespace shiftbench::workbench
