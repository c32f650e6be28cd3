#![allow(dead_code)]

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, HeaderMap, Method, Request, StatusCode};
use axum::Router;
use chrono::{DateTime, TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use wikisurvey_service::{Service, ServiceConfig};

/// A clock that only moves when told to.
#[derive(Clone)]
pub struct ManualClock(Arc<AtomicI64>);

impl ManualClock {
    pub fn new() -> Self {
        Self(Arc::new(AtomicI64::new(Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap().timestamp())))
    }

    pub fn advance_secs(&self, secs: i64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }

    pub fn now(&self) -> DateTime<Utc> {
        Utc.timestamp_opt(self.0.load(Ordering::SeqCst), 0).unwrap()
    }
}

pub fn test_config() -> ServiceConfig {
    ServiceConfig { seed: Some(7), ..ServiceConfig::default() }
}

pub fn service_with(config: ServiceConfig) -> (Service, ManualClock) {
    let clock = ManualClock::new();
    let c = clock.clone();
    let service = Service::with_clock(config, Arc::new(move || c.now())).unwrap();
    (service, clock)
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| {
            panic!("body is not JSON ({e}): {}", String::from_utf8_lossy(&self.body))
        })
    }

    /// Cookie pair (`name=value`) from a `Set-Cookie` header, if any.
    pub fn cookie(&self) -> Option<String> {
        self.headers
            .get(header::SET_COOKIE)
            .map(|v| v.to_str().unwrap().split(';').next().unwrap().to_owned())
    }
}

#[derive(Default, Clone)]
pub struct Client {
    pub cookie: Option<String>,
    pub bearer: Option<String>,
}

impl Client {
    pub fn creator(token: &str) -> Self {
        Self { cookie: None, bearer: Some(token.to_owned()) }
    }

    pub async fn send(&mut self, app: &Router, method: Method, uri: &str, body: Option<Value>) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(c) = &self.cookie {
            req = req.header(header::COOKIE, c);
        }
        if let Some(t) = &self.bearer {
            req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        let req = match body {
            Some(v) => req
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(serde_json::to_vec(&v).unwrap()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        let reply = Reply { status, headers, body };
        if let Some(c) = reply.cookie() {
            self.cookie = Some(c);
        }
        reply
    }

    pub async fn get(&mut self, app: &Router, uri: &str) -> Reply {
        self.send(app, Method::GET, uri, None).await
    }

    pub async fn post(&mut self, app: &Router, uri: &str, body: Value) -> Reply {
        self.send(app, Method::POST, uri, Some(body)).await
    }
}

/// Creates a survey and returns `(survey_id, creator_token)`.
pub async fn create_survey(app: &Router, items: &[&str]) -> (u64, String) {
    let reply = Client::default()
        .post(app, "/surveys", serde_json::json!({ "question": "Which idea is better?", "seed_items": items }))
        .await;
    assert_eq!(reply.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&reply.body));
    let v = reply.json();
    (v["survey_id"].as_u64().unwrap(), v["creator_token"].as_str().unwrap().to_owned())
}
