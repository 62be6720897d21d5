//! Event-stream framing for a mailbox feed.
//!
//! Each delivery is one frame, `id: <seq>\n` then `data: <canonical
//! delivery>\n\n`; idle periods carry a `:hb\n\n` comment frame. The body is
//! written byte for byte here rather than through a generic SSE encoder, so
//! the framing is exactly the documented one.

use std::convert::Infallible;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::http::{header, StatusCode};
use axum::response::Response;
use caremesh_core::{canonical, Delivery, Subscription};
use futures::stream::{self, Stream};
use tokio::sync::watch;
use tokio::time::{Instant, Interval, MissedTickBehavior};

pub const HEARTBEAT: &[u8] = b":hb\n\n";

pub fn frame(delivery: &Delivery) -> Bytes {
    let data = canonical::to_string(delivery).expect("deliveries serialize");
    Bytes::from(format!("id: {}\ndata: {}\n\n", delivery.seq, data))
}

struct Feed {
    backlog: std::vec::IntoIter<Delivery>,
    live: Subscription,
    heartbeat: Interval,
    shutdown: watch::Receiver<bool>,
}

/// Backlog first, then live frames, until the subscriber lags out, the
/// client goes away or the server stops.
pub fn frames(
    backlog: Vec<Delivery>,
    live: Subscription,
    heartbeat: Duration,
    shutdown: watch::Receiver<bool>,
) -> impl Stream<Item = Result<Bytes, Infallible>> + Send {
    let period = heartbeat.max(Duration::from_millis(10));
    let mut ticker = tokio::time::interval_at(Instant::now() + period, period);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let feed = Feed {
        backlog: backlog.into_iter(),
        live,
        heartbeat: ticker,
        shutdown,
    };
    stream::unfold(feed, |mut feed| async move {
        if let Some(d) = feed.backlog.next() {
            return Some((Ok(frame(&d)), feed));
        }
        if *feed.shutdown.borrow() {
            return None;
        }
        let next = tokio::select! {
            d = feed.live.recv() => frame(&d?),
            _ = feed.heartbeat.tick() => Bytes::from_static(HEARTBEAT),
            _ = feed.shutdown.changed() => return None,
        };
        feed.heartbeat.reset();
        Some((Ok(next), feed))
    })
}

pub fn response(
    backlog: Vec<Delivery>,
    live: Subscription,
    heartbeat: Duration,
    shutdown: watch::Receiver<bool>,
) -> Response {
    Response::builder()
        .status(StatusCode::OK)
        .header(header::CONTENT_TYPE, "text/event-stream")
        .header(header::CACHE_CONTROL, "no-cache")
        .body(Body::from_stream(frames(backlog, live, heartbeat, shutdown)))
        .expect("static response parts")
}
