//! Live session server.
//!
//! One simulation task owns the [`LiveSession`]. WebSocket handlers only
//! forward commands into its queue and relay its broadcasts; HTTP handlers
//! read the latest published snapshot.
//!
//! Endpoints: `/ws` (state broadcasts out, commands in), `GET /health`,
//! `GET /config` (config echo of the running segment) and `GET /snapshot`.

use std::future::Future;
use std::net::SocketAddr;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot, watch};

use tipi_core::harness::SessionConfig;
use tipi_core::live::{ClientCommand, LiveSession, WireState};
use tipi_core::{Error, Result};

/// Default control period, 20 Hz.
pub const DEFAULT_TICK: Duration = Duration::from_millis(50);

#[derive(Clone, Debug)]
pub struct ServeConfig {
    pub session: SessionConfig,
    /// Wall-clock time per tick.
    pub tick: Duration,
}

impl ServeConfig {
    pub fn new(session: SessionConfig) -> Self {
        ServeConfig {
            session,
            tick: DEFAULT_TICK,
        }
    }
}

/// Point-in-time view published after every tick and every command.
#[derive(Clone, Debug, serde::Serialize)]
pub struct Snapshot {
    pub state: WireState,
    pub config: SessionConfig,
    pub paused: bool,
    pub finished: bool,
}

fn snapshot_of(live: &LiveSession) -> Snapshot {
    Snapshot {
        state: live.snapshot(),
        config: live.config().clone(),
        paused: live.is_paused(),
        finished: live.is_finished(),
    }
}

type Reply = oneshot::Sender<std::result::Result<(), String>>;

#[derive(Clone)]
struct AppState {
    commands: mpsc::Sender<(ClientCommand, Reply)>,
    states: broadcast::Sender<String>,
    snapshot: watch::Receiver<Snapshot>,
    stop: watch::Receiver<bool>,
}

/// Binds `addr`; a port in use is a startup error.
pub async fn bind(addr: SocketAddr) -> Result<TcpListener> {
    TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Startup(format!("cannot bind {addr}: {e}")))
}

/// Runs the server on `listener` until `shutdown` resolves, then closes
/// the open log segment.
pub async fn serve<F>(cfg: ServeConfig, listener: TcpListener, shutdown: F) -> Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    if cfg.tick.is_zero() {
        return Err(Error::Config("tick period must be positive".into()));
    }
    let live = LiveSession::new(cfg.session.clone())?;
    let (cmd_tx, cmd_rx) = mpsc::channel(256);
    let (state_tx, _) = broadcast::channel(64);
    let (snap_tx, snap_rx) = watch::channel(snapshot_of(&live));
    let (stop_tx, stop_rx) = watch::channel(false);

    let sim = tokio::spawn(sim_loop(
        live,
        cfg.tick,
        cmd_rx,
        state_tx.clone(),
        snap_tx,
        stop_rx.clone(),
    ));

    let app = router(AppState {
        commands: cmd_tx,
        states: state_tx,
        snapshot: snap_rx,
        stop: stop_rx,
    });
    let served = axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            let _ = stop_tx.send(true);
        })
        .await;
    let closed = sim
        .await
        .map_err(|e| Error::Startup(format!("simulation task failed: {e}")))?;
    served.map_err(|e| Error::Startup(format!("server error: {e}")))?;
    closed
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/health", get(|| async { "ok" }))
        .route("/config", get(config_echo))
        .route("/snapshot", get(snapshot))
        .with_state(state)
}

async fn config_echo(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.snapshot.borrow().config.clone())
}

async fn snapshot(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.snapshot.borrow().clone())
}

/// The single authority: drains the command queue at each tick boundary,
/// advances the session and publishes the result.
async fn sim_loop(
    mut live: LiveSession,
    tick: Duration,
    mut commands: mpsc::Receiver<(ClientCommand, Reply)>,
    states: broadcast::Sender<String>,
    snapshot: watch::Sender<Snapshot>,
    mut stop: watch::Receiver<bool>,
) -> Result<()> {
    let mut interval = tokio::time::interval(tick);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = interval.tick() => {}
            _ = stop.changed() => break,
        }
        while let Ok((cmd, reply)) = commands.try_recv() {
            let result = live.apply(cmd).map_err(|e| e.to_string());
            let _ = reply.send(result);
        }
        match live.step() {
            Ok(Some(_)) => {
                let text = serde_json::to_string(&live.snapshot()).expect("state serializes");
                // no receivers is fine
                let _ = states.send(text);
            }
            Ok(None) => {}
            Err(e) => tracing::error!("session stopped: {e}"),
        }
        snapshot.send_replace(snapshot_of(&live));
    }
    live.shutdown()
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(app): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, app))
}

fn error_message(message: &str) -> Message {
    Message::Text(json!({ "type": "error", "message": message }).to_string().into())
}

async fn client(socket: WebSocket, app: AppState) {
    let (mut tx, mut rx) = socket.split();
    let mut states = app.states.subscribe();
    let mut stop = app.stop.clone();
    let first = serde_json::to_string(&app.snapshot.borrow().state).expect("state serializes");
    if tx.send(Message::Text(first.into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            _ = stop.changed() => break,
            incoming = rx.next() => {
                let text = match incoming {
                    Some(Ok(Message::Text(text))) => text,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let reply = match ClientCommand::parse(&text) {
                    Ok(cmd) => {
                        let (reply_tx, reply_rx) = oneshot::channel();
                        if app.commands.send((cmd, reply_tx)).await.is_err() {
                            break;
                        }
                        reply_rx.await.unwrap_or_else(|_| Err("session stopped".into()))
                    }
                    Err(e) => Err(e.to_string()),
                };
                if let Err(message) = reply {
                    if tx.send(error_message(&message)).await.is_err() {
                        break;
                    }
                }
            }
            state = states.recv() => {
                match state {
                    Ok(text) => {
                        if tx.send(Message::Text(text.into())).await.is_err() {
                            break;
                        }
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                }
            }
        }
    }
}
