#include "fke/server.hpp"

#include <httplib.h>

#include "fke/corpus.hpp"

namespace fke {

struct SearchServer::Impl {
  httplib::Server http;
};

SearchServer::SearchServer(KnowledgeBase kb, std::map<std::string, Post> corpus,
                           std::optional<std::filesystem::path> static_dir)
    : kb_(std::move(kb)), corpus_(std::move(corpus)), impl_(std::make_unique<Impl>()) {
  auto reply = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = handle(req.path, req.params);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  impl_->http.Get(R"(/api/.*)", reply);
  if (static_dir) {
    if (!std::filesystem::is_directory(*static_dir))
      throw ServerError("static directory not found: " + static_dir->string());
    impl_->http.set_mount_point("/", static_dir->string());
  }
}

SearchServer::~SearchServer() = default;

ApiResponse SearchServer::handle(const std::string& path,
                                 const std::multimap<std::string, std::string>& params) const {
  try {
    if (path == "/api/health") return {200, {{"status", "ok"}, {"instances", kb_.instances().size()}}};
    if (path == "/api/vocab") return {200, vocab_response(kb_)};
    if (path == "/api/triplets") {
      const Query q = parse_query(params, QueryMode::kTriplets);
      return {200, to_json(query_triplets(kb_, q))};
    }
    if (path == "/api/posts") {
      const Query q = parse_query(params, QueryMode::kPosts);
      return {200, to_json(query_posts(kb_, q), &corpus_)};
    }
    return {404, {{"error", {{"code", "not_found"}, {"message", "no endpoint " + path}}}}};
  } catch (const SearchError& e) {
    return {400, e.to_json()};
  } catch (const std::exception& e) {
    return {500, {{"error", {{"code", "internal"}, {"message", e.what()}}}}};
  }
}

int SearchServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->http.bind_to_any_port(host);
    if (bound < 0) throw ServerError("cannot bind " + host);
    return bound;
  }
  if (!impl_->http.bind_to_port(host, port))
    throw ServerError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void SearchServer::run() { impl_->http.listen_after_bind(); }
void SearchServer::stop() { impl_->http.stop(); }
void SearchServer::wait_until_ready() const { impl_->http.wait_until_ready(); }

std::pair<std::string, int> parse_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon == 0) throw ServerError("address must be host:port, got '" + addr + "'");
  const std::string port_text = addr.substr(colon + 1);
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(port_text, &used);
    if (used != port_text.size()) port = -1;
  } catch (const std::exception&) {
  }
  if (port < 0 || port > 65535) throw ServerError("bad port in '" + addr + "'");
  return {addr.substr(0, colon), port};
}

std::map<std::string, Post> load_corpus_map(const std::filesystem::path& path) {
  std::map<std::string, Post> out;
  for (auto& r : read_corpus(path)) {
    std::string id = r.post.post_id;
    out.emplace(std::move(id), std::move(r.post));
  }
  return out;
}

}  // namespace fke
