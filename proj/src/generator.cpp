#include "carryover/generator.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "carryover/tokenize.hpp"

namespace carryover {

namespace {

// ----- default template set ----------------------------------------------

UtteranceTemplate make_template(std::string intent, std::string act, std::string en,
                                std::string de) {
  UtteranceTemplate t;
  t.intent = std::move(intent);
  t.act = std::move(act);
  t.patterns["en_US"] = std::move(en);
  t.patterns["de_DE"] = std::move(de);
  return t;
}

DomainTemplates local_domain() {
  DomainTemplates d;
  d.domain = "Local";
  d.openings = {
      make_template("Local.SearchPlaceIntent", "search_place",
                    "find a {PlaceType} in {City}", "finde ein {PlaceType} in {City}"),
      make_template("Local.SearchPlaceIntent", "search_place",
                    "show me a {PlaceType} near {City}",
                    "zeige mir ein {PlaceType} bei {City}"),
  };
  d.plain_replies = {
      make_template("Local.InformAction", "inform_place", "i found {Place}",
                    "ich habe {Place} gefunden"),
  };
  d.distractor_replies = {
      make_template("Local.InformAction", "inform_place",
                    "found {Place} it is {Distance} away",
                    "{Place} gefunden es ist {Distance} entfernt"),
      make_template("Local.InformAction", "inform_place", "i found {Place} rated {Rating}",
                    "ich fand {Place} bewertet mit {Rating}"),
  };
  d.followups = {
      {make_template("Local.GetAddressIntent", "request_address", "what's the address",
                     "wie ist die adresse"),
       {"Place", "City"},
       {},
       false},
      {make_template("Local.GetHoursIntent", "request_hours", "when does it open",
                     "wann macht es auf"),
       {"Place"},
       {},
       false},
      {make_template("Local.GetDistanceIntent", "request_how_far", "how far is it",
                     "wie weit ist es"),
       {"Place", "Distance"},
       {},
       false},
      {make_template("Local.SearchPlaceIntent", "search_other",
                     "find another {PlaceType} nearby",
                     "finde ein anderes {PlaceType} in der naehe"),
       {"City"},
       {{"PlaceType", true}},
       false},
      {make_template("Calling.CallIntent", "request_call", "call them", "ruf sie an"),
       {"Place"},
       {},
       true},
  };
  return d;
}

DomainTemplates weather_domain() {
  DomainTemplates d;
  d.domain = "Weather";
  d.openings = {
      make_template("Weather.GetWeatherIntent", "get_weather",
                    "what's the weather in {WeatherCity} {Date}",
                    "wie ist das wetter in {WeatherCity} {Date}"),
  };
  d.plain_replies = {
      make_template("Weather.InformWeather", "inform_weather", "expect {Condition}",
                    "erwarte {Condition}"),
  };
  d.distractor_replies = {
      make_template("Weather.InformWeather", "inform_weather",
                    "it will be {Condition} with {Temperature}",
                    "es wird {Condition} bei {Temperature}"),
  };
  d.followups = {
      {make_template("Weather.GetRainIntent", "request_umbrella", "do i need an umbrella",
                     "brauche ich einen regenschirm"),
       {"WeatherCity", "Date"},
       {},
       false},
      {make_template("Weather.GetTempIntent", "request_temperature", "how warm will it be",
                     "wie warm wird es"),
       {"Date", "Temperature"},
       {},
       false},
      {make_template("Weather.GetWeatherIntent", "shift_date", "what about {Date}",
                     "wie sieht es {Date} aus"),
       {"WeatherCity"},
       {{"Date", false}},
       false},
  };
  return d;
}

DomainTemplates music_domain() {
  DomainTemplates d;
  d.domain = "Music";
  d.openings = {
      make_template("Music.PlayMusicIntent", "play_music", "play {Song} by {Artist}",
                    "spiele {Song} von {Artist}"),
  };
  d.plain_replies = {
      make_template("Music.InformPlay", "inform_play", "now playing {Song}",
                    "jetzt laeuft {Song}"),
  };
  d.distractor_replies = {
      make_template("Music.InformPlay", "inform_play",
                    "now playing {Song} from the album {Album}",
                    "jetzt laeuft {Song} aus dem album {Album}"),
  };
  d.followups = {
      {make_template("Music.AddToPlaylistIntent", "request_add_playlist",
                     "add this to my playlist", "fuege das zu meiner playlist hinzu"),
       {"Song", "Artist"},
       {},
       false},
      {make_template("Music.PlayAlbumIntent", "request_album", "play the whole album",
                     "spiele das ganze album"),
       {"Album", "Artist"},
       {},
       false},
      {make_template("Music.WhoSingsIntent", "request_artist", "who sings this",
                     "wer singt das"),
       {"Song"},
       {},
       false},
  };
  return d;
}

void add_values(GeneratorConfig& config, const std::string& key,
                std::vector<std::string> en, std::vector<std::string> de) {
  config.lexicon[key]["en_US"] = std::move(en);
  config.lexicon[key]["de_DE"] = std::move(de);
}

}  // namespace

GeneratorConfig default_generator_config() {
  GeneratorConfig config;
  config.domains = {local_domain(), weather_domain(), music_domain()};
  config.ack = make_template("General.AckIntent", "ack", "okay here you go",
                             "alles klar bitte sehr");
  add_values(config, "PlaceType", {"museum", "cafe", "pharmacy", "bookstore", "cinema"},
             {"museum", "cafe", "apotheke", "buchladen", "kino"});
  add_values(config, "City", {"san francisco", "berlin", "oakland", "hamburg", "chicago"},
             {"san francisco", "berlin", "oakland", "hamburg", "chicago"});
  add_values(config, "Place",
             {"exploratorium", "blue bottle", "city lights", "walgreens", "castro theatre"},
             {"exploratorium", "blue bottle", "city lights", "walgreens", "castro theatre"});
  add_values(config, "Distance", {"2 miles", "5 miles", "10 miles"},
             {"2 kilometer", "5 kilometer", "10 kilometer"});
  add_values(config, "Rating", {"3 stars", "4 stars", "5 stars"},
             {"3 sterne", "4 sterne", "5 sterne"});
  add_values(config, "WeatherCity",
             {"san francisco", "berlin", "oakland", "hamburg", "chicago"},
             {"san francisco", "berlin", "oakland", "hamburg", "chicago"});
  add_values(config, "Date", {"today", "tomorrow", "friday", "sunday"},
             {"heute", "morgen", "freitag", "sonntag"});
  add_values(config, "Condition", {"sunny", "rainy", "cloudy"},
             {"sonnig", "regnerisch", "bewoelkt"});
  add_values(config, "Temperature", {"20 degrees", "15 degrees", "25 degrees"},
             {"20 grad", "15 grad", "25 grad"});
  add_values(config, "Artist", {"coldplay", "adele", "queen", "nirvana"},
             {"coldplay", "adele", "queen", "nirvana"});
  add_values(config, "Song", {"yellow", "hello", "bohemian rhapsody", "lithium"},
             {"yellow", "hello", "bohemian rhapsody", "lithium"});
  add_values(config, "Album",
             {"parachutes", "twenty five", "a night at the opera", "nevermind"},
             {"parachutes", "twenty five", "a night at the opera", "nevermind"});
  config.schema_map.entries[{"Local", "Place"}] = {"Calling", "Contact"};
  return config;
}

namespace {

// ----- session planning ---------------------------------------------------

struct PlannedSlot {
  std::string key;
  int value_index = 0;
};

struct PlannedTurn {
  Speaker speaker = Speaker::User;
  const UtteranceTemplate* tmpl = nullptr;
  std::string domain;
  std::vector<PlannedSlot> slots;  // pattern appearance order
};

struct PlannedGold {
  std::string gold_key;    // possibly schema-mapped
  std::string source_key;  // lexicon key for the value surface
  int value_index = 0;
};

struct PlannedSession {
  std::vector<PlannedTurn> turns;
  std::map<int, std::vector<PlannedGold>> gold;  // user ordinal -> pairs
};

std::vector<std::string> pattern_keys(const std::string& pattern) {
  std::vector<std::string> keys;
  std::istringstream in(pattern);
  std::string tok;
  while (in >> tok) {
    if (tok.size() > 2 && tok.front() == '{' && tok.back() == '}') {
      keys.push_back(tok.substr(1, tok.size() - 2));
    }
  }
  return keys;
}

class Planner {
 public:
  Planner(const GeneratorConfig& config, std::uint64_t seed) : config_(config), rng_(seed) {}

  PlannedSession plan() {
    PlannedSession session;
    std::map<std::string, int> state;  // key -> active value index
    const DomainTemplates* domain = &pick(config_.domains);
    plan_opening_pair(session, state, *domain);
    plan_user_turn(session, state, domain, 1);
    if (chance(config_.extra_turn_rate)) {
      plan_system_reply(session, state, *domain);
      plan_user_turn(session, state, domain, 2);
    }
    return session;
  }

 private:
  bool chance(double p) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p;
  }

  template <typename T>
  const T& pick(const std::vector<T>& items) {
    if (items.empty()) throw GenerationError("generator: empty template list");
    size_t i = std::uniform_int_distribution<size_t>(0, items.size() - 1)(rng_);
    return items[i];
  }

  int lexicon_size(const std::string& key, const std::string& intent) const {
    auto it = config_.lexicon.find(key);
    if (it == config_.lexicon.end() || it->second.empty()) {
      throw GenerationError("generator: template '" + intent + "' references key '" + key +
                            "' with no lexicon");
    }
    return static_cast<int>(it->second.begin()->second.size());
  }

  int value_for(std::map<std::string, int>& state, const std::string& key,
                const std::string& intent, bool fresh) {
    int size = lexicon_size(key, intent);
    auto it = state.find(key);
    if (it != state.end() && !fresh) return it->second;
    int index;
    if (it != state.end()) {
      // Pick a different value than the active one.
      int shift = std::uniform_int_distribution<int>(1, std::max(1, size - 1))(rng_);
      index = (it->second + shift) % size;
    } else {
      index = std::uniform_int_distribution<int>(0, size - 1)(rng_);
    }
    state[key] = index;
    return index;
  }

  PlannedTurn instantiate(const UtteranceTemplate& tmpl, Speaker speaker,
                          const std::string& domain, std::map<std::string, int>& state,
                          const std::vector<std::pair<std::string, bool>>& own_slots = {}) {
    PlannedTurn turn;
    turn.speaker = speaker;
    turn.tmpl = &tmpl;
    turn.domain = domain;
    std::map<std::string, bool> fresh;
    for (const auto& [key, reuse] : own_slots) fresh[key] = !reuse;
    auto pattern_it = tmpl.patterns.begin();
    if (pattern_it == tmpl.patterns.end()) {
      throw GenerationError("generator: template '" + tmpl.intent + "' has no patterns");
    }
    for (const std::string& key : pattern_keys(pattern_it->second)) {
      bool want_fresh = fresh.count(key) ? fresh[key] : false;
      turn.slots.push_back({key, value_for(state, key, tmpl.intent, want_fresh)});
    }
    return turn;
  }

  void plan_opening_pair(PlannedSession& session, std::map<std::string, int>& state,
                         const DomainTemplates& domain) {
    // Fresh values for the opening keys so topic shifts introduce new entities.
    const UtteranceTemplate& opening = pick(domain.openings);
    PlannedTurn user;
    {
      PlannedTurn turn;
      turn.speaker = Speaker::User;
      turn.tmpl = &opening;
      turn.domain = domain.domain;
      for (const std::string& key : pattern_keys(opening.patterns.begin()->second)) {
        turn.slots.push_back({key, value_for(state, key, opening.intent, true)});
      }
      user = std::move(turn);
    }
    session.turns.push_back(std::move(user));
    plan_system_reply(session, state, domain);
  }

  void plan_system_reply(PlannedSession& session, std::map<std::string, int>& state,
                         const DomainTemplates& domain) {
    // After a followup the system just acknowledges; after an opening it
    // reports a result, with distractor slots at the configured rate.
    const PlannedTurn& last = session.turns.back();
    bool opening_like = false;
    for (const UtteranceTemplate& t : domain.openings) {
      if (last.tmpl == &t) opening_like = true;
    }
    if (opening_like) {
      bool distract = config_.distractor_rate > 0.0 && chance(config_.distractor_rate);
      const auto& pool = distract && !domain.distractor_replies.empty()
                             ? domain.distractor_replies
                             : domain.plain_replies;
      session.turns.push_back(instantiate(pick(pool), Speaker::System, domain.domain, state));
    } else {
      session.turns.push_back(
          instantiate(config_.ack, Speaker::System, "General", state));
    }
  }

  // Most recent planned value of `key` before the current turn, if any.
  std::optional<int> context_value(const PlannedSession& session, const std::string& key) {
    for (auto it = session.turns.rbegin(); it != session.turns.rend(); ++it) {
      for (const PlannedSlot& slot : it->slots) {
        if (slot.key == key) return slot.value_index;
      }
    }
    return std::nullopt;
  }

  void plan_user_turn(PlannedSession& session, std::map<std::string, int>& state,
                      const DomainTemplates*& active_domain, int user_ordinal) {
    const bool all_gold = config_.distractor_rate == 0.0;
    if (!all_gold && chance(config_.topic_shift_rate)) {
      const DomainTemplates& next = pick(config_.domains);
      active_domain = &next;
      const UtteranceTemplate& opening = pick(next.openings);
      PlannedTurn turn;
      turn.speaker = Speaker::User;
      turn.tmpl = &opening;
      turn.domain = next.domain;
      for (const std::string& key : pattern_keys(opening.patterns.begin()->second)) {
        turn.slots.push_back({key, value_for(state, key, opening.intent, true)});
      }
      session.turns.push_back(std::move(turn));
      session.gold[user_ordinal] = {};
      return;
    }

    std::vector<const FollowupTemplate*> pool;
    for (const FollowupTemplate& f : active_domain->followups) {
      if (all_gold && (f.domain_switch || !f.own_slots.empty())) continue;
      if (f.domain_switch && !chance(config_.domain_switch_rate)) continue;
      bool reachable = false;
      for (const std::string& key : f.carry_keys) {
        if (context_value(session, key)) reachable = true;
      }
      if (reachable) pool.push_back(&f);
    }
    if (pool.empty()) {
      for (const FollowupTemplate& f : active_domain->followups) {
        if (!f.domain_switch && (!all_gold || f.own_slots.empty())) pool.push_back(&f);
      }
    }
    const FollowupTemplate& followup = *pick(pool);

    std::vector<PlannedGold> gold;
    if (all_gold) {
      // Every distinct context (key, value) becomes gold.
      std::set<std::string> seen;
      for (auto it = session.turns.rbegin(); it != session.turns.rend(); ++it) {
        for (const PlannedSlot& slot : it->slots) {
          if (seen.insert(slot.key).second) {
            gold.push_back({slot.key, slot.key, slot.value_index});
          }
        }
      }
    } else {
      for (const std::string& key : followup.carry_keys) {
        std::optional<int> value = context_value(session, key);
        if (!value) continue;
        std::string gold_key = key;
        if (followup.domain_switch) {
          std::string source_domain = active_domain->domain;
          auto it = config_.schema_map.entries.find({source_domain, key});
          if (it != config_.schema_map.entries.end()) gold_key = it->second.second;
        }
        gold.push_back({gold_key, key, *value});
      }
    }

    std::string turn_domain = active_domain->domain;
    if (followup.domain_switch) {
      auto dot = followup.user.intent.find('.');
      turn_domain = dot == std::string::npos ? followup.user.intent
                                             : followup.user.intent.substr(0, dot);
    }
    session.turns.push_back(instantiate(followup.user, Speaker::User, turn_domain, state,
                                        followup.own_slots));
    session.gold[user_ordinal] = std::move(gold);
  }

  const GeneratorConfig& config_;
  std::mt19937_64 rng_;
};

// ----- rendering -----------------------------------------------------------

Turn render_turn(const GeneratorConfig& config, const PlannedTurn& planned,
                 const std::string& language) {
  auto pattern_it = planned.tmpl->patterns.find(language);
  if (pattern_it == planned.tmpl->patterns.end()) {
    throw GenerationError("generator: template '" + planned.tmpl->intent +
                          "' has no pattern for language " + language);
  }
  Turn turn;
  turn.speaker = planned.speaker;
  turn.act = planned.tmpl->act;
  turn.intent = planned.tmpl->intent;

  size_t slot_cursor = 0;
  std::istringstream in(pattern_it->second);
  std::string tok;
  while (in >> tok) {
    if (tok.size() > 2 && tok.front() == '{' && tok.back() == '}') {
      if (slot_cursor >= planned.slots.size()) {
        throw GenerationError("generator: placeholder mismatch in template '" +
                              planned.tmpl->intent + "'");
      }
      const PlannedSlot& planned_slot = planned.slots[slot_cursor++];
      const auto& languages = config.lexicon.at(planned_slot.key);
      auto lex_it = languages.find(language);
      if (lex_it == languages.end() ||
          planned_slot.value_index >= static_cast<int>(lex_it->second.size())) {
        throw GenerationError("generator: template '" + planned.tmpl->intent +
                              "' value missing for key '" + planned_slot.key +
                              "' in language " + language);
      }
      const std::string& value = lex_it->second[planned_slot.value_index];
      int start = static_cast<int>(turn.tokens.size());
      for (const std::string& value_tok : tokenize(value)) turn.tokens.push_back(value_tok);
      turn.slots.push_back({planned_slot.key, value, planned.domain});
      turn.slot_spans.push_back(SlotSpan{start, static_cast<int>(turn.tokens.size())});
    } else {
      for (const std::string& word : tokenize(tok)) turn.tokens.push_back(word);
    }
  }
  if (slot_cursor != planned.slots.size()) {
    throw GenerationError("generator: placeholder mismatch in template '" +
                          planned.tmpl->intent + "'");
  }
  return turn;
}

std::string value_surface(const GeneratorConfig& config, const std::string& key,
                          int index, const std::string& language) {
  const auto& languages = config.lexicon.at(key);
  auto it = languages.find(language);
  if (it == languages.end() || index >= static_cast<int>(it->second.size())) {
    throw GenerationError("generator: gold value missing for key '" + key +
                          "' in language " + language);
  }
  return it->second[index];
}

}  // namespace

std::map<std::string, std::vector<DialogueSession>> synthesize_parallel_corpus(
    const GeneratorConfig& config, std::uint64_t seed) {
  if (config.num_sessions < 1) throw GenerationError("generator: session count must be >= 1");
  if (config.domains.empty()) throw GenerationError("generator: no domain templates");
  if (config.languages.empty()) throw GenerationError("generator: no languages");

  std::map<std::string, std::vector<DialogueSession>> corpora;
  for (const std::string& language : config.languages) corpora[language] = {};

  for (int s = 0; s < config.num_sessions; ++s) {
    Planner planner(config, seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(s));
    PlannedSession planned = planner.plan();
    char id[64];
    std::snprintf(id, sizeof id, "%s-%06d", config.id_prefix.c_str(), s);
    for (const std::string& language : config.languages) {
      DialogueSession session;
      session.id = id;
      session.language = language;
      for (const PlannedTurn& turn : planned.turns) {
        session.turns.push_back(render_turn(config, turn, language));
      }
      for (const auto& [ordinal, gold] : planned.gold) {
        std::set<SlotKeyValue>& pairs = session.gold_carryover[ordinal];
        for (const PlannedGold& g : gold) {
          pairs.insert({g.gold_key, value_surface(config, g.source_key, g.value_index,
                                                  language)});
        }
      }
      validate_session(session);
      corpora[language].push_back(std::move(session));
    }
  }
  return corpora;
}

LexiconTranslator default_phrase_table() {
  std::map<std::string, std::string> phrases = {
      {"find a", "finde ein"},
      {"show me a", "zeige mir ein"},
      {"near", "bei"},
      {"i found", "ich habe gefunden"},
      {"found", "gefunden"},
      {"it is", "es ist"},
      {"away", "entfernt"},
      {"rated", "bewertet mit"},
      {"what's the address", "wie ist die adresse"},
      {"when does it open", "wann macht es auf"},
      {"how far is it", "wie weit ist es"},
      {"find another", "finde ein anderes"},
      {"nearby", "in der naehe"},
      {"call them", "ruf sie an"},
      {"what's the weather in", "wie ist das wetter in"},
      {"expect", "erwarte"},
      {"it will be", "es wird"},
      {"with", "mit"},
      {"do i need an umbrella", "brauche ich einen regenschirm"},
      {"how warm will it be", "wie warm wird es"},
      {"what about", "wie sieht es aus"},
      {"play the whole album", "spiele das ganze album"},
      {"play", "spiele"},
      {"by", "von"},
      {"now playing", "jetzt laeuft"},
      {"from the album", "aus dem album"},
      {"add this to my playlist", "fuege das zu meiner playlist hinzu"},
      {"who sings this", "wer singt das"},
      {"okay here you go", "alles klar bitte sehr"},
      {"pharmacy", "apotheke"},
      {"bookstore", "buchladen"},
      {"cinema", "kino"},
      {"miles", "kilometer"},
      {"stars", "sterne"},
      {"today", "heute"},
      {"tomorrow", "morgen"},
      {"friday", "freitag"},
      {"sunday", "sonntag"},
      {"sunny", "sonnig"},
      {"rainy", "regnerisch"},
      {"cloudy", "bewoelkt"},
      {"degrees", "grad"},
  };
  return LexiconTranslator(std::move(phrases));
}

SyntheticBenchmark make_benchmark(int train_sessions, int dev_sessions, int test_sessions,
                                  std::uint64_t seed, GeneratorConfig base) {
  SyntheticBenchmark bench;
  bench.schema_map = base.schema_map;
  GeneratorConfig config = base;
  config.num_sessions = train_sessions;
  config.id_prefix = base.id_prefix + "-train";
  bench.train = synthesize_parallel_corpus(config, seed * 3 + 1);
  config.num_sessions = dev_sessions;
  config.id_prefix = base.id_prefix + "-dev";
  bench.dev = synthesize_parallel_corpus(config, seed * 3 + 2);
  config.num_sessions = test_sessions;
  config.id_prefix = base.id_prefix + "-test";
  bench.test = synthesize_parallel_corpus(config, seed * 3 + 3);
  return bench;
}

}  // namespace carryover
