use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::http::{HeaderValue, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use tower_http::cors::{Any, CorsLayer};
use vbsurv::api::Service;
use vbsurv::store::load_model;

use crate::{Failure, ServeArgs};

async fn dispatch(svc: Arc<Service>, method: Method, uri: Uri, body: Bytes) -> Response {
    let path = uri.path().to_string();
    let result = tokio::task::spawn_blocking(move || svc.handle(method.as_str(), &path, &body)).await;
    match result {
        Ok(r) => {
            let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, Json(r.body)).into_response()
        }
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

fn cors(origin: Option<&str>) -> Result<CorsLayer, Failure> {
    let layer = CorsLayer::new().allow_methods([Method::GET, Method::POST]).allow_headers(Any);
    Ok(match origin {
        None => layer.allow_origin(Any),
        Some(o) => {
            let v = HeaderValue::from_str(o).map_err(|_| Failure::Usage(format!("invalid --cors-origin `{o}`")))?;
            layer.allow_origin(v)
        }
    })
}

pub fn run(a: &ServeArgs) -> Result<(), Failure> {
    let artifact = a.model.as_ref().map(load_model).transpose()?;
    let base_seed = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    let svc = Arc::new(Service::new(artifact, a.seed, base_seed)?);
    let layer = cors(a.cors_origin.as_deref())?;
    let app = Router::new()
        .fallback(move |method: Method, uri: Uri, body: Bytes| dispatch(Arc::clone(&svc), method, uri, body))
        .layer(layer);

    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Data(format!("cannot start runtime: {e}")))?;
    rt.block_on(async {
        let addr = format!("{}:{}", a.host, a.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Failure::Data(format!("cannot bind {addr}: {e}")))?;
        let local: SocketAddr = listener.local_addr().map_err(|e| Failure::Data(e.to_string()))?;
        eprintln!("listening on http://{local}");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Failure::Data(format!("server error: {e}")))
    })
}
