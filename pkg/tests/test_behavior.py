import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lonecast import behavior
from lonecast.behavior import WindowSpec
from lonecast.model import LocationFix, PhoneEvent, StudyClock

HOME = (33.6405, -117.8443)
DAY = 86400.0


def offset(lat, lon, north, east):
    dlat = math.degrees(north / behavior.EARTH_RADIUS)
    dlon = math.degrees(east / (behavior.EARTH_RADIUS * math.cos(math.radians(lat))))
    return lat + dlat, lon + dlon


def fixes_at(point, times, pid="P"):
    return [LocationFix(pid, float(t), point[0], point[1]) for t in times]


class TestBehavior:
    def test_empty_window(self):
        f = behavior.behavior_features([], WindowSpec(0, 10))
        assert all(v == 0 for v in f.flat().values())

    def test_counts(self):
        ev = [PhoneEvent("P", float(t), "screen_on") for t in (1, 2, 3)] + [PhoneEvent("P", float(t), "screen_unlock") for t in (4, 5)]
        ev.sort(key=lambda e: e.time)
        f = behavior.behavior_features(ev, WindowSpec(0, 10))
        assert (f.n_screen_on, f.n_screen_unlock, f.n_screen_off) == (3, 2, 0)

    def test_calls(self):
        ev = [PhoneEvent("P", 1.0, "call", duration=60.0), PhoneEvent("P", 2.0, "call", duration=120.0)]
        f = behavior.behavior_features(ev, WindowSpec(0, 10))
        assert (f.n_calls, f.call_total, f.call_mean) == (2, 180.0, 90.0)

    def test_half_open_window_and_categories(self):
        ev = [
            PhoneEvent("P", 0.0, "message", category="sms"),
            PhoneEvent("P", 5.0, "message", category="chat"),
            PhoneEvent("P", 5.0, "notification", category="social"),
            PhoneEvent("P", 10.0, "message", category="sms"),
        ]
        f = behavior.behavior_features(ev, WindowSpec(0, 10))
        assert f.n_messages == 2 and f.messages_by_category == {"chat": 1, "sms": 1}
        flat = f.flat(["chat", "sms", "work"], ["social"])
        assert flat["n_messages_work"] == 0 and flat["n_notifications_social"] == 1

    def test_window_must_be_ordered(self):
        with pytest.raises(ValueError):
            WindowSpec(5, 5)


class TestHaversine:
    def test_identity_and_degree(self):
        assert behavior.haversine((10.0, 20.0), (10.0, 20.0)) == 0.0
        assert behavior.haversine((0.0, 0.0), (0.0, 1.0)) == pytest.approx(111_195, abs=1)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-90, 90), st.floats(-180, 180), st.floats(-90, 90), st.floats(-180, 180))
    def test_symmetry(self, a, b, c, d):
        assert behavior.haversine((a, b), (c, d)) == pytest.approx(behavior.haversine((c, d), (a, b)), rel=1e-12, abs=1e-6)


class TestPlaces:
    def test_one_point_one_hour(self):
        places = behavior.cluster_places(fixes_at(HOME, range(0, 3601, 60)))
        assert len(places) == 1 and places.home == 0

    def test_overnight_bout_is_home(self):
        work = offset(*HOME, 1000.0, 0.0)
        noon = fixes_at(work, np.arange(12 * 3600, 12 * 3600 + 1801, 60))
        night = fixes_at(HOME, np.arange(DAY + 2 * 3600, DAY + 2 * 3600 + 1801, 60))
        places = behavior.cluster_places(noon + night)
        assert len(places) == 2
        home = places.home_place
        assert behavior.haversine((home.latitude, home.longitude), HOME) < 1.0

    def test_moving_trace_has_no_places(self):
        fixes = []
        for k in range(60):
            fixes.append(LocationFix("P", 60.0 * k, *offset(*HOME, 200.0 * k, 0.0)))
        assert len(behavior.cluster_places(fixes)) == 0

    def test_no_night_dwell_falls_back_to_total_dwell(self):
        a = fixes_at(HOME, np.arange(9 * 3600, 11 * 3600, 60))
        b = fixes_at(offset(*HOME, 2000.0, 0.0), np.arange(12 * 3600, 12 * 3600 + 1200, 60))
        places = behavior.cluster_places(a + b)
        assert len(places) == 2 and places.home == 0

    def test_nearby_visits_merge(self):
        a = fixes_at(HOME, np.arange(0, 1200, 60))
        b = fixes_at(offset(*HOME, 2000.0, 0.0), np.arange(1500, 2700, 60))
        c = fixes_at(offset(*HOME, 50.0, 0.0), np.arange(3000, 4200, 60))
        places = behavior.cluster_places(a + b + c)
        assert len(places) == 2 and len(places.places[0].visits) == 2

    def test_night_uses_study_timezone(self):
        # 03:00 in Los Angeles is 11:00 UTC
        local_night = fixes_at(HOME, np.arange(11 * 3600, 11 * 3600 + 1800, 60))
        utc_night = fixes_at(offset(*HOME, 3000.0, 0.0), np.arange(DAY + 2 * 3600, DAY + 2 * 3600 + 1800, 60))
        la = behavior.cluster_places(local_night + utc_night, clock=StudyClock("America/Los_Angeles"))
        utc = behavior.cluster_places(local_night + utc_night)
        assert la.home == 0 and utc.home == 1


class TestContext:
    def test_stationary_window(self):
        fx = fixes_at(HOME, range(0, 3601, 60))
        places = behavior.cluster_places(fx)
        c = behavior.context_features(fx, places, WindowSpec(0, 3601))
        assert c.lat_variance == 0 and c.travel_distance == 0 and c.n_places == 1
        assert c.home_duration == 3600 and c.outside_mean == 0 and c.outside_std == 0

    def test_square_path(self):
        corners = [HOME, offset(*HOME, 100, 0), offset(*HOME, 100, 100), offset(*HOME, 0, 100), HOME]
        fx = [LocationFix("P", 60.0 * k, *p) for k, p in enumerate(corners)]
        c = behavior.context_features(fx, behavior.PlaceSet(), WindowSpec(0, 1000))
        assert c.travel_distance == pytest.approx(400, abs=1)
        assert math.isnan(c.home_duration) and math.isnan(c.outside_mean)

    def test_away_episodes(self):
        away = offset(*HOME, 3000.0, 0.0)
        fx = fixes_at(HOME, np.arange(0, 3601, 60))
        fx += fixes_at(away, np.arange(3660, 4200, 60)) + fixes_at(HOME, [4200.0, 4260.0])
        fx += fixes_at(away, np.arange(4320, 5460, 60)) + fixes_at(HOME, [5460.0])
        places = behavior.cluster_places(fx)
        c = behavior.context_features(fx, places, WindowSpec(0, 6000))
        assert c.outside_mean == pytest.approx(900) and c.outside_std == pytest.approx(300)

    def test_speed_field_preferred(self):
        fx = [LocationFix("P", 0.0, *HOME, speed=2.0), LocationFix("P", 100.0, *offset(*HOME, 100, 0))]
        c = behavior.context_features(fx, behavior.PlaceSet(), WindowSpec(0, 200))
        assert c.speed_mean == pytest.approx(1.5, rel=1e-6)  # 2.0 given, 1.0 derived

    def test_split_window_adds_travel(self):
        fx = [LocationFix("P", 60.0 * k, *offset(*HOME, 37.0 * k, 11.0 * k)) for k in range(20)]
        places = behavior.PlaceSet()
        full = behavior.context_features(fx, places, WindowSpec(0, 1200)).travel_distance
        a = behavior.context_features(fx[:10], places, WindowSpec(0, 600)).travel_distance
        b = behavior.context_features(fx[10:], places, WindowSpec(600, 1200)).travel_distance
        bridge = behavior.haversine((fx[9].latitude, fx[9].longitude), (fx[10].latitude, fx[10].longitude))
        assert a + b + bridge == pytest.approx(full, rel=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-5e4, 5e4))
    def test_translation_invariance(self, dt):
        # shifts are whole hours so nightly home detection is unaffected
        dt = round(dt / 3600) * 3600.0
        away = offset(*HOME, 800.0, 0.0)
        times = np.arange(0, 7200, 120)
        base = fixes_at(HOME, times[:30]) + fixes_at(away, times[30:45]) + fixes_at(HOME, times[45:])
        moved = [LocationFix(f.participant, f.time + dt, f.latitude, f.longitude) for f in base]
        clock = StudyClock()
        a = behavior.context_features(base, behavior.cluster_places(base, clock=clock), WindowSpec(0, 7200))
        b = behavior.context_features(moved, behavior.cluster_places(moved, clock=clock), WindowSpec(dt, 7200 + dt))
        for k in behavior.CONTEXT_NAMES:
            assert getattr(b, k) == pytest.approx(getattr(a, k), rel=1e-9, abs=1e-9)
        ev = [PhoneEvent("P", float(t), "screen_on") for t in times]
        ev_moved = [PhoneEvent("P", float(t + dt), "screen_on") for t in times]
        assert behavior.behavior_features(ev, WindowSpec(0, 3000)) == behavior.behavior_features(ev_moved, WindowSpec(dt, 3000 + dt))


def test_write_feature_csv(tmp_path):
    rows = [behavior.FeatureRow("P", 0.0, 1.0, {"a": 1.0, "b": math.nan})]
    behavior.write_feature_csv(rows, tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_text().splitlines() == ["participant,start,end,a,b", "P,0.0,1.0,1.0,"]
