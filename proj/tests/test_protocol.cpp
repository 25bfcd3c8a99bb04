#include <gtest/gtest.h>

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "vrfb/protocol.hpp"

using namespace vrfb;

namespace {

double sig9(double v) {
    const std::string s = format_sig9(v);
    double out = 0.0;
    std::from_chars(s.data(), s.data() + s.size(), out);
    return out;
}

class MessageGen {
public:
    explicit MessageGen(std::uint64_t seed) : rng_(seed) {}

    double number() {
        std::uniform_int_distribution<int> pick(0, 4);
        switch (pick(rng_)) {
            case 0: return 0.0;
            case 1: return sig9(std::uniform_real_distribution<double>(-3.0, 3.0)(rng_));
            case 2: return sig9(std::uniform_real_distribution<double>(-1e6, 1e6)(rng_));
            case 3: return sig9(std::ldexp(std::uniform_real_distribution<double>(-1.0, 1.0)(rng_),
                                           std::uniform_int_distribution<int>(-300, 300)(rng_)));
            default: return std::uniform_int_distribution<int>(-1000, 1000)(rng_) / 8.0;
        }
    }

    std::uint64_t u64() {
        return std::uniform_int_distribution<int>(0, 1)(rng_) ? rng_() : rng_() % 1000;
    }

    std::string text() {
        static const std::string alphabet = "abcXYZ019 _-\"\\/\n\t{}:,";
        std::string s;
        const int n = std::uniform_int_distribution<int>(0, 40)(rng_);
        for (int i = 0; i < n; ++i) s += alphabet[rng_() % alphabet.size()];
        if (rng_() % 4 == 0) s += "\xc3\xa9";
        return s;
    }

    Vec3 vec() { return {number(), number(), number()}; }

    Message operator()() {
        switch (rng_() % 6) {
            case 0: return RcCommand{u64(), u64(), number(), number(), number(), number()};
            case 1: return SessionControl{rng_() % 2 ? SessionAction::start : SessionAction::stop};
            case 2: return ConfigUpdate{text(), rng_() % 2 ? ControllerMode::two_button : ControllerMode::one_handed, u64()};
            case 3: return StateUpdate{u64(), vec(), vec(), vec(), rng_() % 2 == 0};
            case 4: return EventNotice{static_cast<EventKind>(rng_() % 6), u64(), text()};
            default: return ErrorMessage{text(), text()};
        }
    }

    std::mt19937_64& rng() { return rng_; }

private:
    std::mt19937_64 rng_;
};

const std::string kStart = R"({"v":1,"type":"start"})";

}  // namespace

TEST(Codec, StartBytes) {
    EXPECT_EQ(encode(SessionControl{SessionAction::start}), kStart);
    EXPECT_EQ(encode(SessionControl{SessionAction::stop}), R"({"v":1,"type":"stop"})");
}

TEST(Codec, RcRoundTrip) {
    const RcCommand rc{12, 3400, 0.5, -1.25, 0.0, 0.1};
    const std::string bytes = encode(rc);
    EXPECT_EQ(bytes, R"({"v":1,"type":"rc","seq":12,"t_ms":3400,"vx":0.5,"vy":-1.25,"vz":0,"yaw_rate":0.1})");
    const auto r = decode(bytes);
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(std::get<RcCommand>(r.message()), rc);
}

TEST(Codec, NonFiniteRefusedOnEncode) {
    RcCommand rc{1, 0, std::nan(""), 0, 0, 0};
    try {
        encode(rc);
        FAIL() << "expected an encoding error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::encoding);
    }
    rc.vx = std::numeric_limits<double>::infinity();
    EXPECT_THROW(encode(rc), Error);
}

TEST(Codec, OversizeRefusedOnEncode) {
    EXPECT_THROW(encode(ErrorMessage{"x", std::string(1300, 'a')}), Error);
}

TEST(Codec, DecodeStop) {
    const auto r = decode(R"({"v":1,"type":"stop"})");
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(std::get<SessionControl>(r.message()).action, SessionAction::stop);
}

TEST(Codec, VersionMismatch) {
    const auto r = decode(R"({"v":2,"type":"stop"})");
    ASSERT_FALSE(r.ok());
    EXPECT_EQ(r.error().code, DecodeErrorCode::version_mismatch);
}

TEST(Codec, ErrorCodes) {
    EXPECT_EQ(decode("not json").error().code, DecodeErrorCode::malformed_payload);
    EXPECT_EQ(decode("[1,2]").error().code, DecodeErrorCode::malformed_payload);
    EXPECT_EQ(decode(R"({"type":"stop"})").error().code, DecodeErrorCode::malformed_payload);
    EXPECT_EQ(decode(R"({"v":1,"type":"warp"})").error().code, DecodeErrorCode::unknown_type);
    EXPECT_EQ(decode(R"({"v":1,"type":"stop","extra":1})").error().code, DecodeErrorCode::malformed_payload);
    EXPECT_EQ(decode(R"({"v":1,"type":"rc","seq":1,"t_ms":0,"vx":0,"vy":0,"vz":0})").error().code,
              DecodeErrorCode::malformed_payload);
    EXPECT_EQ(decode(R"({"v":1,"type":"rc","seq":-1,"t_ms":0,"vx":0,"vy":0,"vz":0,"yaw_rate":0})").error().code,
              DecodeErrorCode::malformed_payload);
    EXPECT_EQ(decode(R"({"v":1,"type":"rc","seq":1,"t_ms":0,"vx":"0","vy":0,"vz":0,"yaw_rate":0})").error().code,
              DecodeErrorCode::malformed_payload);
    EXPECT_EQ(decode(R"({"v":1,"type":"config","participant_id":"P1","controller_mode":"joystick","plan_seed":1})")
                  .error().code,
              DecodeErrorCode::malformed_payload);
    EXPECT_EQ(decode(std::string(1201, ' ')).error().code, DecodeErrorCode::malformed_payload);
}

TEST(Codec, KeyOrderIsFixed) {
    MessageGen gen(3);
    for (int i = 0; i < 1000; ++i) {
        const std::string bytes = encode(gen());
        EXPECT_EQ(bytes.rfind(R"({"v":1,"type":")", 0), 0u) << bytes;
    }
}

TEST(CodecProperty, DecodeInvertsEncode) {
    MessageGen gen(11);
    for (int i = 0; i < 20000; ++i) {
        const Message m = gen();
        const std::string bytes = encode(m);
        ASSERT_LE(bytes.size(), kMaxMessageBytes);
        const auto r = decode(bytes);
        ASSERT_TRUE(r.ok()) << bytes << " : " << r.error().detail;
        ASSERT_EQ(r.message(), m) << bytes;
        ASSERT_EQ(encode(r.message()), bytes);
    }
}

TEST(CodecProperty, FuzzNeverThrows) {
    MessageGen gen(77);
    auto& rng = gen.rng();
    std::size_t decoded = 0;
    for (int i = 0; i < 100000; ++i) {
        std::string input;
        switch (i % 4) {
            case 0: {
                const int n = static_cast<int>(rng() % 200);
                for (int k = 0; k < n; ++k) input += static_cast<char>(rng() & 0xff);
                break;
            }
            case 1:
            case 2: {
                input = encode(gen());
                const int edits = 1 + static_cast<int>(rng() % 4);
                for (int k = 0; k < edits && !input.empty(); ++k) {
                    const std::size_t pos = rng() % input.size();
                    switch (rng() % 3) {
                        case 0: input[pos] = static_cast<char>(rng() & 0xff); break;
                        case 1: input.erase(pos, 1 + rng() % 8); break;
                        default: input.insert(pos, 1, "{}[]\":,0-e."[rng() % 11]);
                    }
                }
                break;
            }
            default: {
                input = encode(gen());
                input.resize(rng() % (input.size() + 1));
            }
        }
        const auto r = decode(input);
        if (r.ok()) {
            ++decoded;
            EXPECT_NO_THROW(encode(r.message()));
        } else {
            EXPECT_FALSE(r.error().detail.empty());
        }
    }
    EXPECT_GT(decoded, 0u);
}

TEST(SessionMachine, ConfigStartRcStop) {
    SessionState s;
    auto t = transition(s, ConfigUpdate{"P01", ControllerMode::two_button, 1});
    EXPECT_EQ(t.state.phase, SessionPhase::configured);
    ASSERT_EQ(t.actions.size(), 1u);
    EXPECT_TRUE(std::holds_alternative<action::ApplyConfig>(t.actions[0]));

    t = transition(t.state, SessionControl{SessionAction::start});
    EXPECT_EQ(t.state.phase, SessionPhase::trial_running);
    ASSERT_EQ(t.actions.size(), 2u);
    EXPECT_TRUE(std::holds_alternative<action::ArmTrial>(t.actions[0]));
    EXPECT_EQ(std::get<action::EmitEvent>(t.actions[1]).kind, EventKind::trial_start);

    t = transition(t.state, RcCommand{1, 0, 1, 0, 0, 0});
    EXPECT_EQ(t.state.last_seq, 1u);
    ASSERT_EQ(t.actions.size(), 1u);
    EXPECT_EQ(std::get<action::ForwardToSim>(t.actions[0]).command.vx, 1.0);

    t = transition(t.state, SessionControl{SessionAction::stop});
    EXPECT_EQ(t.state.phase, SessionPhase::trial_done);
    EXPECT_TRUE(std::holds_alternative<action::CloseTrialLog>(t.actions.at(0)));

    t = transition(t.state, SessionControl{SessionAction::start});
    EXPECT_EQ(t.state.phase, SessionPhase::trial_running);
}

TEST(SessionMachine, StaleSeqDroppedSilently) {
    const SessionState s{SessionPhase::trial_running, 7};
    for (std::uint64_t seq : {5u, 7u}) {
        const auto t = transition(s, RcCommand{seq, 0, 0, 0, 0, 0});
        EXPECT_EQ(t.state, s);
        EXPECT_TRUE(t.actions.empty());
    }
}

TEST(SessionMachine, OutOfPhaseRcRejected) {
    for (auto phase : {SessionPhase::idle, SessionPhase::configured, SessionPhase::trial_done}) {
        const SessionState s{phase, 0};
        const auto t = transition(s, RcCommand{1, 0, 0, 0, 0, 0});
        EXPECT_EQ(t.state, s);
        ASSERT_EQ(t.actions.size(), 1u);
        EXPECT_EQ(std::get<action::ReplyError>(t.actions[0]).error.code, "bad_phase");
    }
}

TEST(SessionMachine, PhaseRules) {
    EXPECT_FALSE(transition(SessionState{}, SessionControl{SessionAction::start}).actions.empty());
    EXPECT_EQ(transition(SessionState{}, SessionControl{SessionAction::start}).state.phase, SessionPhase::idle);
    EXPECT_EQ(transition(SessionState{SessionPhase::configured, 0}, SessionControl{SessionAction::stop}).state.phase,
              SessionPhase::configured);
    const SessionState running{SessionPhase::trial_running, 3};
    EXPECT_EQ(transition(running, ConfigUpdate{"P02", ControllerMode::one_handed, 2}).state, running);
    EXPECT_EQ(std::get<action::ReplyError>(transition(running, StateUpdate{}).actions.at(0)).error.code,
              "unexpected_type");
}

TEST(SessionMachine, RunnerNoticeEndsTrial) {
    const SessionState running{SessionPhase::trial_running, 3};
    auto t = transition(running, RunnerNotice::target_reached);
    EXPECT_EQ(t.state.phase, SessionPhase::trial_done);
    EXPECT_EQ(t.state.last_seq, 3u);
    EXPECT_EQ(std::get<action::EmitEvent>(t.actions.at(0)).kind, EventKind::trial_complete);
    t = transition(running, RunnerNotice::trial_failed);
    EXPECT_EQ(std::get<action::EmitEvent>(t.actions.at(0)).kind, EventKind::trial_failed);
    EXPECT_EQ(std::get<action::ReplyError>(transition(SessionState{}, RunnerNotice::target_reached).actions.at(0))
                  .error.code,
              "bad_phase");
}

TEST(SessionMachineProperty, RcOnlyForwardedWhileRunningWithIncreasingSeq) {
    std::mt19937_64 rng(5);
    SessionState s;
    std::uint64_t forwarded_last = 0;
    for (int i = 0; i < 50000; ++i) {
        Message m;
        switch (rng() % 6) {
            case 0: m = ConfigUpdate{"P1", ControllerMode::two_button, 0}; break;
            case 1: m = SessionControl{SessionAction::start}; break;
            case 2: m = SessionControl{SessionAction::stop}; break;
            default: m = RcCommand{rng() % 200, 0, 0, 0, 0, 0};
        }
        const auto t = transition(s, m);
        for (const auto& a : t.actions) {
            if (const auto* f = std::get_if<action::ForwardToSim>(&a)) {
                ASSERT_EQ(s.phase, SessionPhase::trial_running);
                ASSERT_GT(f->command.seq, forwarded_last);
                forwarded_last = f->command.seq;
            }
        }
        if (s.phase != SessionPhase::trial_running) {
            ASSERT_NE(t.state.phase == SessionPhase::trial_running && !std::holds_alternative<SessionControl>(m), true);
        }
        s = t.state;
    }
}

namespace {
nlohmann::json conformance_vectors() {
    std::ifstream in(VRFB_CONFORMANCE_FILE);
    if (!in) throw std::runtime_error("missing conformance vector file");
    return nlohmann::json::parse(in);
}
}  // namespace

TEST(Conformance, ValidVectorsDecodeAndReencodeToSameBytes) {
    const auto doc = conformance_vectors();
    std::set<std::size_t> kinds;
    for (const auto& v : doc.at("valid")) {
        const std::string bytes = v.at("bytes").get<std::string>();
        const DecodeResult r = decode(bytes);
        ASSERT_TRUE(r) << v.at("name") << ": " << r.error().detail;
        EXPECT_EQ(encode(r.message()), bytes) << v.at("name");
        kinds.insert(r.message().index());
    }
    EXPECT_EQ(kinds.size(), std::variant_size_v<Message>);
}

TEST(Conformance, InvalidVectorsYieldTheirErrorCode) {
    const auto doc = conformance_vectors();
    for (const auto& v : doc.at("invalid")) {
        const DecodeResult r = decode(v.at("bytes").get<std::string>());
        ASSERT_FALSE(r) << v.at("name");
        EXPECT_EQ(to_string(r.error().code), v.at("code").get<std::string>()) << v.at("name");
    }
}

TEST(Conformance, SpotValues) {
    const auto doc = conformance_vectors();
    std::map<std::string, std::string> by_name;
    for (const auto& v : doc.at("valid")) by_name[v.at("name")] = v.at("bytes");
    const auto rc = std::get<RcCommand>(decode(by_name.at("rc_nine_digits")).message());
    EXPECT_EQ(rc.vz, 1e-5);
    EXPECT_EQ(rc.vy, -1.41421356);
    const auto cfg = std::get<ConfigUpdate>(decode(by_name.at("config_one_handed")).message());
    EXPECT_EQ(cfg.controller_mode, ControllerMode::one_handed);
    EXPECT_EQ(cfg.plan_seed, 42u);
    const auto err = std::get<ErrorMessage>(decode(by_name.at("error_escaped_text")).message());
    EXPECT_EQ(err.text, "quote \" and backslash \\");
    const auto st = std::get<StateUpdate>(decode(by_name.at("state_moving")).message());
    EXPECT_EQ(st.pos, (Vec3{2.75, -0.125, 1.5}));
    EXPECT_TRUE(st.collided);
}
