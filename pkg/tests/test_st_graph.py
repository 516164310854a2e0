import pytest

from remtrack.geometry import BoundingBox, scaled_distance
from remtrack.st_graph import NodeId, build_graph, neighbors, update_graph


def box(cx, cy, w=2.0, h=2.0):
    return BoundingBox(cx, cy, w, h)


def random_frames(rng, n_frames=6, n_instances=5, p_present=0.8, spread=12.0):
    frames = []
    for _ in range(n_frames):
        frame = [
            (i, box(rng.uniform(0, spread), rng.uniform(0, spread), rng.uniform(0.5, 3), rng.uniform(0.5, 3)))
            for i in range(n_instances)
            if rng.random() < p_present
        ]
        frames.append(frame)
    return frames


def brute_force_edges(frame_nodes, d_th):
    """Edge enumeration straight from the definition."""
    spatial = set()
    nodes = dict(frame_nodes)
    for i in nodes:
        for j in nodes:
            if i < j and scaled_distance(nodes[i], nodes[j]) <= d_th:
                spatial.add((i, j))
    return spatial


class TestNodeId:
    def test_valid(self):
        n = NodeId(instance=3, t=0)
        assert (n.instance, n.t) == (3, 0)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            NodeId(instance=-1, t=0)
        with pytest.raises(ValueError):
            NodeId(instance=0, t=-2)


class TestBuildGraph:
    def test_single_instance_two_frames(self):
        g = build_graph([[(0, box(1, 1))], [(0, box(1.5, 1))]], d_th=15)
        assert g.spatial_edges(0) == () and g.spatial_edges(1) == ()
        assert g.temporal_edges(0) == (0,)

    def test_two_coincident_boxes_one_frame(self):
        g = build_graph([[(0, box(1, 1)), (1, box(1, 1))]], d_th=15)
        assert g.spatial_edges(0) == ((0, 1),)
        assert g.temporal_edges(0) == ()

    def test_missing_instance_temporal_edges(self):
        b = box(1, 1)
        frames = [
            [(0, b), (1, b), (2, b)],
            [(0, b), (1, b)],  # instance 2 absent
            [(0, b), (1, b), (2, b)],
        ]
        g = build_graph(frames, d_th=15)
        assert g.temporal_edges(0) == (0, 1)
        assert g.temporal_edges(1) == (0, 1)
        # re-entry after the gap gets no edge across it
        assert 2 not in g.temporal_edges(1)

    def test_spatial_edges_match_brute_force(self, rng):
        for _ in range(20):
            frames = random_frames(rng)
            g = build_graph(frames, d_th=4.0)
            for t, frame in enumerate(frames):
                assert set(g.spatial_edges(t)) == brute_force_edges(frame, 4.0)

    def test_duplicate_instance_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            build_graph([[(0, box(1, 1)), (0, box(2, 2))]], d_th=15)

    def test_temporal_edges_only_consecutive_same_instance(self, rng):
        frames = random_frames(rng, n_frames=8)
        g = build_graph(frames, d_th=5.0)
        for t in range(g.n_frames - 1):
            here = {i for i, _ in frames[t]}
            there = {i for i, _ in frames[t + 1]}
            assert set(g.temporal_edges(t)) == here & there


class TestUpdateGraph:
    def test_incremental_equals_batch_no_changes(self):
        b0, b1 = box(1, 1), box(2, 1)
        batch = build_graph([[(0, b0)], [(0, b1)]], d_th=15)
        inc = build_graph([[(0, b0)]], d_th=15)
        update_graph(inc, 1, entered=set(), left=set(), boxes={0: b1})
        assert inc == batch

    def test_leaving_instance_has_no_node(self):
        g = build_graph([[(0, box(1, 1)), (1, box(2, 1))]], d_th=15)
        update_graph(g, 1, entered=set(), left={1}, boxes={0: box(1.2, 1)})
        assert g.frames[1].ids == (0,)

    def test_random_schedule_matches_batch(self, rng):
        for _ in range(15):
            frames = random_frames(rng, n_frames=10, n_instances=6, p_present=0.7)
            batch = build_graph(frames, d_th=4.0)
            inc = build_graph([], d_th=4.0)
            prev_ids = set()
            for t, frame in enumerate(frames):
                ids = {i for i, _ in frame}
                update_graph(
                    inc,
                    t,
                    entered=ids - prev_ids,
                    left=prev_ids - ids,
                    boxes=dict(frame),
                )
                prev_ids = ids
            assert inc == batch

    def test_rejects_non_latest_frame(self):
        g = build_graph([[(0, box(1, 1))]], d_th=15)
        with pytest.raises(ValueError, match="latest"):
            update_graph(g, 0, entered=set(), left=set(), boxes={0: box(1, 1)})
        with pytest.raises(ValueError, match="latest"):
            update_graph(g, 5, entered=set(), left=set(), boxes={0: box(1, 1)})

    def test_rejects_enter_leave_overlap(self):
        g = build_graph([[(0, box(1, 1))]], d_th=15)
        with pytest.raises(ValueError, match="entering and leaving"):
            update_graph(g, 1, entered={0}, left={0}, boxes={0: box(1, 1)})

    def test_rejects_missing_boxes(self):
        g = build_graph([[(0, box(1, 1))]], d_th=15)
        with pytest.raises(ValueError, match="missing boxes"):
            update_graph(g, 1, entered={1}, left=set(), boxes={0: box(1, 1)})


class TestNeighbors:
    def test_isolated_node(self):
        g = build_graph([[(0, box(0, 0)), (1, box(100, 100))]], d_th=2)
        assert neighbors(g, 0, 0) == ()

    def test_clique_of_three(self):
        b = box(1, 1)
        g = build_graph([[(0, b), (1, b), (2, b)]], d_th=15)
        for i in range(3):
            assert len(neighbors(g, 0, i)) == 2

    def test_chain(self):
        # only consecutive pairs within threshold
        frames = [[(0, box(0, 0, 1, 1)), (1, box(3, 0, 1, 1)), (2, box(6, 0, 1, 1))]]
        g = build_graph(frames, d_th=3.5)
        assert neighbors(g, 0, 1) == (0, 2)
        assert neighbors(g, 0, 0) == (1,)
        assert neighbors(g, 0, 2) == (1,)

    def test_missing_node_raises(self):
        g = build_graph([[(0, box(1, 1))]], d_th=15)
        with pytest.raises(KeyError):
            neighbors(g, 0, 7)
        with pytest.raises(KeyError):
            neighbors(g, 3, 0)

    def test_ascending_order(self, rng):
        frames = random_frames(rng, n_frames=3)
        g = build_graph(frames, d_th=6.0)
        for t in range(g.n_frames):
            for i in g.frames[t].ids:
                ns = neighbors(g, t, i)
                assert list(ns) == sorted(ns)
                assert i not in ns
