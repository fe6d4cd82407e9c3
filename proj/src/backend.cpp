#include "vigil/backend.hpp"

#include "vigil/error.hpp"
#include "vigil/prng.hpp"

#include <httplib.h>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

extern char** environ;

namespace vigil {

using json = nlohmann::json;

std::string_view to_string(SpecificityLevel s) {
    switch (s) {
        case SpecificityLevel::low: return "low";
        case SpecificityLevel::medium: return "medium";
        case SpecificityLevel::high: return "high";
    }
    return "low";
}

std::optional<SpecificityLevel> parse_specificity(std::string_view s) {
    if (s == "low") return SpecificityLevel::low;
    if (s == "medium") return SpecificityLevel::medium;
    if (s == "high") return SpecificityLevel::high;
    return std::nullopt;
}

std::string apply_specificity(std::string_view prompt, SpecificityLevel level, const SpecificityTemplates& t) {
    std::string out(prompt);
    if (level == SpecificityLevel::low) return out;
    out += "\n\n" + t.medium_suffix;
    if (level == SpecificityLevel::high) out += "\n\n" + t.high_suffix;
    return out;
}

std::size_t assign_worker(std::size_t current, std::size_t n_workers) {
    if (n_workers == 0) throw std::invalid_argument("assign_worker: n_workers must be >= 1");
    return current % n_workers + 1;
}

std::set<std::string> screen_unsafe(std::string_view code, const std::vector<std::string>& patterns) {
    std::set<std::string> hits;
    auto ident_start = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; };
    auto ident_char = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
    std::size_t i = 0;
    while (i < code.size()) {
        const char c = code[i];
        if (c == '#') {
            while (i < code.size() && code[i] != '\n') ++i;
            continue;
        }
        if (c == '"' || c == '\'') {
            const bool triple = code.substr(i, 3) == std::string(3, c);
            std::size_t j = i + (triple ? 3 : 1);
            while (j < code.size()) {
                if (code[j] == '\\') {
                    j += 2;
                    continue;
                }
                if (!triple && code[j] == '\n') break;
                if (code[j] == c && (!triple || code.substr(j, 3) == std::string(3, c))) {
                    j += triple ? 3 : 1;
                    break;
                }
                ++j;
            }
            i = j;
            continue;
        }
        if (ident_start(c)) {
            std::size_t j = i;
            while (j < code.size() && ident_char(code[j])) ++j;
            const std::string_view word = code.substr(i, j - i);
            // A string prefix glued to a quote is part of the literal.
            if (j < code.size() && (code[j] == '"' || code[j] == '\'') && word.size() <= 2 &&
                word.find_first_not_of("rRbBuUfF") == std::string_view::npos) {
                i = j;
                continue;
            }
            if (std::find(patterns.begin(), patterns.end(), word) != patterns.end()) hits.emplace(word);
            i = j;
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            while (i < code.size() && ident_char(code[i])) ++i;
            continue;
        }
        ++i;
    }
    return hits;
}

std::string encode_request(const BackendRequest& r) {
    json j = {{"prompt", r.prompt},
              {"specificity", to_string(r.specificity)},
              {"temperature", r.temperature},
              {"top_p", r.top_p},
              {"max_tokens", r.max_tokens},
              {"seed", r.seed}};
    return j.dump();
}

BackendResponse decode_response(std::string_view line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw BackendError("malformed backend response: not JSON", std::string(line.substr(0, 512)));
    }
    if (!j.is_object() || !j.contains("code") || !j.at("code").is_string()) {
        throw BackendError("malformed backend response: missing string field 'code'", std::string(line.substr(0, 512)));
    }
    BackendResponse r;
    r.code = j.at("code").get<std::string>();
    if (j.contains("backend_meta")) {
        if (!j.at("backend_meta").is_object()) {
            throw BackendError("malformed backend response: 'backend_meta' must be an object");
        }
        r.backend_meta = j.at("backend_meta");
    }
    return r;
}

// ---- mock --------------------------------------------------------------------

bool glob_match(std::string_view pattern, std::string_view text) {
    std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

TemplateBankFile parse_template_banks(std::string_view json_text, const std::string& source) {
    TemplateBankFile file;
    try {
        const json doc = json::parse(json_text);
        file.version = doc.at("version").get<std::string>();
        for (const auto& [id, jb] : doc.at("banks").items()) {
            MockBank bank;
            if (jb.contains("latency_ms")) {
                bank.latency_base_ms = jb.at("latency_ms").value("base", 0.0);
                bank.latency_jitter_ms = jb.at("latency_ms").value("jitter", 0.0);
            }
            for (const auto& jt : jb.at("templates")) {
                MockTemplate t;
                t.prompt_glob = jt.value("prompt", "*");
                const std::string spec = jt.value("specificity", "*");
                if (spec != "*") {
                    t.specificity = parse_specificity(spec);
                    if (!t.specificity) throw InputError(source + ": bank '" + id + "' has unknown specificity '" + spec + "'");
                }
                if (jt.contains("attempt") && !jt.at("attempt").is_null()) t.attempt = jt.at("attempt").get<std::size_t>();
                if (jt.contains("variants")) {
                    t.variants = jt.at("variants").get<std::vector<std::string>>();
                } else {
                    t.variants.push_back(jt.at("code").get<std::string>());
                }
                if (t.variants.empty()) throw InputError(source + ": bank '" + id + "' has a template with no code");
                bank.templates.push_back(std::move(t));
            }
            file.banks.emplace(id, std::move(bank));
        }
    } catch (const json::exception& e) {
        throw InputError(source + ": malformed template bank: " + e.what());
    }
    return file;
}

TemplateBankFile load_template_banks(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read template bank: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_template_banks(buf.str(), path.string());
}

MockBackend::MockBackend(std::shared_ptr<const TemplateBankFile> banks, std::string bank_id)
    : banks_(std::move(banks)), bank_id_(std::move(bank_id)) {
    if (!banks_ || !banks_->banks.contains(bank_id_)) {
        throw InputError("unknown mock bank '" + bank_id_ + "'");
    }
}

BackendResponse MockBackend::generate(const BackendRequest& r) {
    const MockBank& bank = banks_->banks.at(bank_id_);
    std::uint64_t key = mix_seed(r.seed, fnv1a64(r.prompt_id));
    key = mix_seed(key, static_cast<std::uint64_t>(r.specificity));
    key = mix_seed(key, r.attempt);
    for (const auto& t : bank.templates) {
        if (!glob_match(t.prompt_glob, r.prompt_id)) continue;
        if (t.specificity && *t.specificity != r.specificity) continue;
        if (t.attempt && *t.attempt != r.attempt) continue;
        const std::size_t variant = static_cast<std::size_t>(key % t.variants.size());
        SplitMix64 rng(key);
        const double latency = std::round(bank.latency_base_ms + bank.latency_jitter_ms * rng.uniform());
        BackendResponse resp;
        resp.code = t.variants[variant];
        resp.backend_meta = {{"backend", "mock"}, {"bank", bank_id_}, {"variant", variant}, {"latency_ms", latency}};
        return resp;
    }
    throw BackendError("backend failure: mock bank '" + bank_id_ + "' has no template for prompt '" + r.prompt_id +
                       "' (" + std::string(to_string(r.specificity)) + ", attempt " + std::to_string(r.attempt) + ")");
}

// ---- subprocess --------------------------------------------------------------

namespace {

struct Fd {
    int fd = -1;
    Fd() = default;
    explicit Fd(int f) : fd(f) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    Fd(Fd&& o) noexcept : fd(std::exchange(o.fd, -1)) {}
    ~Fd() { reset(); }
    void reset() {
        if (fd >= 0) ::close(fd);
        fd = -1;
    }
};

void make_pipe(Fd& read_end, Fd& write_end) {
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0) throw BackendError(std::string("backend failure: pipe: ") + std::strerror(errno));
    read_end.fd = fds[0];
    write_end.fd = fds[1];
}

void ignore_sigpipe_once() {
    // A child that exits without reading its stdin must surface as an exit
    // status, not kill the harness.
    static const bool done = [] {
        std::signal(SIGPIPE, SIG_IGN);
        return true;
    }();
    (void)done;
}

}  // namespace

SubprocessBackend::SubprocessBackend(std::string command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {
    ignore_sigpipe_once();
}

BackendResponse SubprocessBackend::generate(const BackendRequest& request) {
    Fd in_r, in_w, out_r, out_w, err_r, err_w;
    make_pipe(in_r, in_w);
    make_pipe(out_r, out_w);
    make_pipe(err_r, err_w);

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_r.fd, STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out_w.fd, STDOUT_FILENO);
    posix_spawn_file_actions_adddup2(&actions, err_w.fd, STDERR_FILENO);
    std::string sh = "/bin/sh", dash_c = "-c", cmd = command_;
    std::array<char*, 4> argv = {sh.data(), dash_c.data(), cmd.data(), nullptr};
    pid_t pid = 0;
    const int rc = posix_spawn(&pid, "/bin/sh", &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) throw BackendError(std::string("backend failure: spawn: ") + std::strerror(rc));
    in_r.reset();
    out_w.reset();
    err_w.reset();

    const std::string line = encode_request(request) + "\n";
    std::size_t written = 0;
    while (written < line.size()) {
        const ssize_t n = ::write(in_w.fd, line.data() + written, line.size() - written);
        if (n < 0) {
            if (errno == EINTR) continue;
            break;  // EPIPE: the child went away; its exit status tells the story
        }
        written += static_cast<std::size_t>(n);
    }
    in_w.reset();

    std::string out, err;
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    bool timed_out = false;
    std::array<pollfd, 2> fds = {pollfd{out_r.fd, POLLIN, 0}, pollfd{err_r.fd, POLLIN, 0}};
    while (fds[0].fd >= 0 || fds[1].fd >= 0) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            timed_out = true;
            break;
        }
        const int ready = ::poll(fds.data(), fds.size(), static_cast<int>(left.count()));
        if (ready < 0) {
            if (errno == EINTR) continue;
            break;
        }
        for (std::size_t k = 0; k < fds.size(); ++k) {
            if (fds[k].fd < 0 || !(fds[k].revents & (POLLIN | POLLHUP | POLLERR))) continue;
            std::array<char, 4096> buf;
            const ssize_t n = ::read(fds[k].fd, buf.data(), buf.size());
            if (n <= 0) {
                fds[k].fd = -1;
            } else {
                (k == 0 ? out : err).append(buf.data(), static_cast<std::size_t>(n));
            }
        }
    }
    if (timed_out) ::kill(pid, SIGKILL);
    int status = 0;
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
    if (timed_out) {
        throw BackendError("backend timeout after " + std::to_string(timeout_.count()) + " ms", err);
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        const std::string how = WIFEXITED(status) ? "exit status " + std::to_string(WEXITSTATUS(status))
                                                  : "signal " + std::to_string(WTERMSIG(status));
        throw BackendError("backend failure: command exited with " + how, err);
    }
    std::istringstream lines(out);
    std::string response;
    while (std::getline(lines, response)) {
        if (response.find_first_not_of(" \t\r") != std::string::npos) break;
    }
    if (response.find_first_not_of(" \t\r") == std::string::npos) {
        throw BackendError("malformed backend response: empty output", err);
    }
    return decode_response(response);
}

// ---- http --------------------------------------------------------------------

HttpBackend::HttpBackend(std::string url, std::chrono::milliseconds timeout) : timeout_(timeout) {
    constexpr std::string_view scheme = "http://";
    if (!url.starts_with(scheme)) throw InputError("http backend: only http:// endpoints are supported: " + url);
    const auto slash = url.find('/', scheme.size());
    host_port_ = url.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : url.substr(slash);
}

BackendResponse HttpBackend::generate(const BackendRequest& request) {
    httplib::Client client(host_port_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    auto res = client.Post(path_, encode_request(request), "application/json");
    if (!res) {
        const auto e = res.error();
        if (e == httplib::Error::Read || e == httplib::Error::ConnectionTimeout) {
            throw BackendError("backend timeout: " + httplib::to_string(e));
        }
        throw BackendError("backend failure: " + httplib::to_string(e));
    }
    if (res->status != 200) {
        throw BackendError("backend failure: HTTP status " + std::to_string(res->status), res->body.substr(0, 512));
    }
    return decode_response(res->body);
}

std::unique_ptr<Backend> make_backend(const ModelDescriptor& model, const BackendOptions& options) {
    const std::string& ep = model.endpoint;
    if (ep.starts_with("mock:")) return std::make_unique<MockBackend>(options.mock_banks, ep.substr(5));
    if (ep.starts_with("http://") || ep.starts_with("https://")) return std::make_unique<HttpBackend>(ep, options.timeout);
    if (ep.empty()) throw InputError("model '" + model.name + "' has an empty endpoint");
    return std::make_unique<SubprocessBackend>(ep, options.timeout);
}

// ---- gate ----------------------------------------------------------------------

GenerationRecord generate_sample(Backend& backend, const ModelDescriptor& model, const Prompt& prompt,
                                 SpecificityLevel level, const GenerationParams& params, std::size_t trial,
                                 const GateConfig& gate) {
    GenerationRecord rec;
    rec.prompt_id = prompt.id;
    rec.model_name = model.name;
    rec.specificity = level;
    rec.trial_index = trial;
    rec.params_used = params;

    BackendRequest req;
    req.prompt = apply_specificity(prompt.text, level, gate.templates);
    req.specificity = level;
    req.prompt_id = prompt.id;

    double reported_ms = 0.0;
    bool all_reported = true;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t attempt = 1; attempt <= gate.max_retries + 1; ++attempt) {
        req.temperature = rec.params_used.temperature;
        req.top_p = rec.params_used.top_p;
        req.max_tokens = rec.params_used.max_tokens;
        req.seed = rec.params_used.seed;
        req.attempt = attempt;
        BackendResponse resp = backend.generate(req);
        rec.gate_attempts = attempt;
        if (resp.backend_meta.contains("latency_ms") && resp.backend_meta.at("latency_ms").is_number()) {
            reported_ms += resp.backend_meta.at("latency_ms").get<double>();
        } else {
            all_reported = false;
        }
        const auto hits = screen_unsafe(resp.code, gate.unsafe_patterns);
        rec.gate_history.emplace_back(hits.begin(), hits.end());
        rec.backend_meta = std::move(resp.backend_meta);
        if (hits.empty()) {
            rec.code = std::move(resp.code);
            break;
        }
        if (attempt == gate.max_retries + 1) {
            rec.gate_exhausted = true;
            break;
        }
        // Round to 1e-9 so repeated subtraction prints as 0.5, 0.3, ...
        const double lowered = std::round((rec.params_used.temperature - gate.temperature_step) * 1e9) / 1e9;
        rec.params_used.temperature = std::max(gate.temperature_floor, lowered);
    }
    const auto wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    rec.response_time_ms = all_reported ? reported_ms : wall;
    return rec;
}

}  // namespace vigil
