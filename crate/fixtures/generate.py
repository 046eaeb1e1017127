#!/usr/bin/env python3
"""Regenerates tweets.jsonl, the synthetic traffic-signal corpus.

Run from this directory: python3 generate.py
The output is deterministic.
"""

import json
import random
from datetime import datetime, timedelta, timezone

rng = random.Random(20190301)

STREETS = [
    "macleod", "crowchild", "deerfoot", "glenmore", "sarcee", "memorial",
    "stoney", "shaganappi", "bow", "elbow", "centre", "barlow", "blackfoot",
    "edmonton", "nose", "country", "symons", "richmond", "kensington",
    "bowness", "sunridge", "marlborough", "heritage", "anderson", "southland",
    "fairview", "acadia", "mission", "inglewood", "bridgeland", "tuscany",
    "ranchlands", "varsity", "brentwood", "dalhousie", "huntington",
    "airdrie", "beddington", "coventry", "evanston", "sage", "nolan",
    "panorama", "hawkwood", "arbour", "scenic", "silver", "springs",
    "cougar", "signature", "aspen", "westhills", "strathcona", "discovery",
    "lakeview", "oakridge", "haysboro", "willow", "park", "bonavista",
    "mckenzie", "cranston", "auburn", "mahogany", "seton", "walden",
    "chinook", "manchester", "ogden", "riverbend", "quarry", "forest",
    "lawn", "penbrooke", "dover", "erin", "woods", "marlborough",
]

THEMES = {
    "malfunction": {
        "tags": ["yyctraffic", "signalfail"],
        "lead": [
            "traffic lights malfunctioning again at {s} and {t}",
            "signal malfunction at {s} means every light is flashing red",
            "the traffic signal at {s} is broken and dark this {when}",
            "lights out at {s} intersection, signals totally dead",
            "another malfunctioning traffic light on {s} near {t}",
            "signals stuck on red at {s}, nobody knows who goes",
            "power outage killed the traffic lights along {s}",
            "traffic signal failure at {s}, police directing cars",
        ],
        "words": [
            "broken", "flashing", "outage", "power", "failure", "dead",
            "stuck", "dark", "repair", "crew", "fault", "wiring", "blackout",
            "reboot", "glitch", "controller", "cabinet", "storm", "flicker",
            "unreliable", "intermittent", "restore", "technician", "breakdown",
            "fuse", "surge", "defective", "malfunctions", "reset", "offline",
        ],
    },
    "accident": {
        "tags": ["yyctraffic", "yycroads"],
        "lead": [
            "accident at {s} and {t} after the signal went out",
            "collision at {s}, lights were not working",
            "crash on {s} caused by a dead traffic light",
            "near miss at {s} because the left turn signal is confusing",
            "serious accident blocking lanes on {s} near {t}",
            "fender bender at {s}, signals flashing yellow",
        ],
        "words": [
            "collision", "crash", "injured", "ambulance", "police", "lanes",
            "blocked", "tow", "truck", "pedestrian", "cyclist", "danger",
            "dangerous", "unsafe", "safety", "speeding", "redlight", "rear",
            "ended", "scene", "emergency", "responders", "witness", "skid",
            "icy", "wreck", "closure", "detour", "sirens", "hazard",
        ],
    },
    "timing": {
        "tags": ["commute", "yycroads"],
        "lead": [
            "waited five minutes at the {s} light, timing is terrible",
            "signal timing on {s} makes the commute so slow",
            "why is the green so short on {s} at rush hour",
            "the lights on {s} are not synchronized, stop at every block",
            "traffic backed up for blocks on {s}, signals need retiming",
            "advance green on {s} is way too short this {when}",
            "congestion on {s} again, the light cycle is too long",
        ],
        "words": [
            "wait", "waiting", "slow", "delay", "delays", "congestion",
            "gridlock", "backed", "queue", "cycle", "green", "yellow",
            "synchronized", "coordination", "wave", "rush", "hour", "peak",
            "commute", "minutes", "idle", "idling", "throughput", "faster",
            "efficient", "timing", "retiming", "optimize", "bottleneck",
            "stopandgo", "latency", "longer", "shorter", "sluggish",
        ],
    },
    "feature": {
        "tags": ["transit", "smartcity"],
        "lead": [
            "would love an app that shows live signal status on {s}",
            "the city should add a countdown display at {s}",
            "please show real time travel times for {s} on the map",
            "add a notification when the {s} lights are out",
            "need a way to report a broken signal at {s} from my phone",
            "display detour routes when {s} is closed",
            "let drivers see upcoming green waves on {s}",
        ],
        "words": [
            "app", "map", "display", "countdown", "notification", "notify",
            "alert", "report", "route", "routes", "feature", "button",
            "screen", "website", "portal", "dashboard", "status", "live",
            "realtime", "feed", "subscribe", "search", "schedule", "planner",
            "navigation", "sign", "message", "board", "information", "data",
            "open", "share", "download", "option", "menu",
        ],
    },
    "pedestrian": {
        "tags": ["walkyyc", "transit"],
        "lead": [
            "the walk signal at {s} is confusing for seniors",
            "pedestrian button at {s} does nothing, had to jaywalk",
            "crosswalk timing on {s} is too short to cross with a stroller",
            "hard to see the walk light at {s} in the sun",
            "kids crossing {s} need a longer pedestrian phase",
            "the audible signal at {s} is too quiet for blind pedestrians",
        ],
        "words": [
            "walk", "crosswalk", "crossing", "pedestrians", "seniors",
            "stroller", "wheelchair", "accessible", "accessibility", "blind",
            "audible", "chirp", "visible", "readable", "clear", "easy",
            "difficult", "confusing", "kids", "school", "zone", "sidewalk",
            "curb", "ramp", "beacon", "yield", "phase", "jaywalk", "hand",
            "symbol", "contrast", "glare", "sun", "tactile",
        ],
    },
}

FILLER = [
    "today", "tonight", "morning", "evening", "again", "seriously", "ugh",
    "city", "council", "calgary", "downtown", "northeast", "southwest",
    "neighbourhood", "bus", "train", "ctrain", "lrt", "station", "parking",
    "snow", "winter", "weekend", "monday", "friday", "construction",
    "roadwork", "cones", "potholes", "drivers", "motorists", "everyone",
    "honestly", "week", "month", "year", "terrible", "awful", "annoying",
    "frustrating", "ridiculous", "thanks", "finally", "fixed", "still",
    "shift", "work", "late", "meeting", "airport", "hospital", "mall",
    "stadium", "university", "college", "library", "bridge", "tunnel",
    "overpass", "underpass", "ramp", "merge", "exit", "lane", "turn",
    "left", "right", "uturn", "median", "corner", "block", "avenue",
    "street", "road", "trail", "boulevard", "highway", "ring",
    "coffee", "groceries", "daycare", "pickup", "dropoff", "appointment",
    "dentist", "gym", "hockey", "game", "concert", "festival", "parade",
    "marathon", "stampede", "chinook", "wind", "rain", "hail", "fog",
    "darkness", "sunrise", "sunset", "holiday", "vacation", "taxi",
    "uber", "scooter", "bike", "truckers", "delivery", "courier", "van",
    "suv", "minivan", "pickup", "semi", "trailer", "convoy", "escort",
    "tourists", "visitors", "residents", "neighbours", "commuters",
    "taxpayers", "alderman", "mayor", "budget", "funding", "complaint",
    "complaints", "petition", "survey", "feedback", "hotline", "email",
    "tweet", "photo", "video", "dashcam", "footage", "camera", "sensor",
    "loop", "detector", "pole", "mast", "arm", "lens", "bulb", "led",
    "lamp", "paint", "markings", "arrow", "stripe", "curve", "hill",
    "slope", "gravel", "slush", "puddle", "flooding", "drainage",
    "sewer", "manhole", "utility", "pipe", "excavation", "crane",
    "scaffolding", "barrier", "fence", "flagger", "worker", "machinery",
    "noise", "dust", "smell", "exhaust", "emissions", "pollution",
    "climate", "carbon", "transit", "ridership", "fare", "ticket",
    "transfer", "platform", "shelter", "bench", "garbage", "graffiti",
    "vandalism", "theft", "lighting", "streetlight", "darkened",
    "neighbourhoods", "suburbs", "outskirts", "core", "beltline",
    "eastvillage", "chinatown", "ramsay", "hillhurst", "sunnyside",
]

WHEN = ["morning", "evening", "afternoon", "weekend", "week"]

WEIGHTS = {"malfunction": 50, "accident": 30, "timing": 45, "feature": 40, "pedestrian": 35}


def tweet(theme, data):
    s = rng.choice(STREETS)
    t = rng.choice([x for x in STREETS if x != s])
    text = rng.choice(data["lead"]).format(s=s, t=t, when=rng.choice(WHEN))
    extra = rng.sample(data["words"], rng.randint(3, 5)) + rng.sample(FILLER, rng.randint(2, 4))
    rng.shuffle(extra)
    text += " " + " ".join(extra)
    tags = [data["tags"][0]] if rng.random() < 0.85 else [data["tags"][1]]
    if rng.random() < 0.15:
        tags = []
    return text, tags


def main():
    start = datetime(2019, 3, 1, 6, 0, tzinfo=timezone.utc)
    themes = [t for t, w in WEIGHTS.items() for _ in range(w)]
    rng.shuffle(themes)
    lines = []
    for i, theme in enumerate(themes):
        text, tags = tweet(theme, THEMES[theme])
        if i % 17 == 0:
            text += " https://t.co/" + "".join(rng.choice("abcdefgh1234") for _ in range(8))
        if i % 23 == 0:
            text = text.replace("signal", "<b>signal</b>", 1)
        ts = start + timedelta(minutes=rng.randint(0, 60 * 24 * 30))
        record = {
            "id": f"tw{i + 1:03d}",
            "text": text + "".join(f" #{t}" for t in tags),
            "source": "twitter",
            "ts": ts.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "lat": round(51.0447 + rng.uniform(-0.12, 0.12), 5),
            "lon": round(-114.0719 + rng.uniform(-0.18, 0.18), 5),
            "meta": {"lang": "en"},
        }
        lines.append(json.dumps(record, separators=(",", ":")))
    with open("tweets.jsonl", "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
