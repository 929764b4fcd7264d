#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "fke/knowledge_base.hpp"
#include "fke/search.hpp"

namespace fke {

class ServerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

// Read-only HTTP front end over an immutable knowledge base.
class SearchServer {
 public:
  SearchServer(KnowledgeBase kb, std::map<std::string, Post> corpus,
               std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~SearchServer();
  SearchServer(const SearchServer&) = delete;
  SearchServer& operator=(const SearchServer&) = delete;

  // Socket-free dispatch used by the HTTP handlers. `path` excludes the query string.
  ApiResponse handle(const std::string& path, const std::multimap<std::string, std::string>& params) const;

  // Binds host:port (port 0 picks a free port) and returns the bound port. Throws ServerError.
  int bind(const std::string& host, int port);
  // Blocks until stop() is called.
  void run();
  void stop();
  void wait_until_ready() const;

  const KnowledgeBase& kb() const { return kb_; }

 private:
  struct Impl;
  KnowledgeBase kb_;
  std::map<std::string, Post> corpus_;
  std::unique_ptr<Impl> impl_;
};

// Splits "host:port"; throws ServerError when malformed.
std::pair<std::string, int> parse_address(const std::string& addr);

// Loads a corpus file keyed by post id.
std::map<std::string, Post> load_corpus_map(const std::filesystem::path& path);

}  // namespace fke
